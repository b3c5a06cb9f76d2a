"""Command-line interface: ``chainqa <command> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import load_qa_dataset, resolve
from .embedding import train_embeddings
from .answer_filter import rank_examples, train_filter
from .kg import load_triples
from .pipeline import (DESK_PRESET, Pipeline, PipelineConfig, answer_question, evaluate, filter_only,
                       prepare_graph, rerank_items, run_half_ablation, run_topn_sweep, train_pipeline)
from .reasoner import build_training_pairs, read_pairs, train_reasoner, write_pairs
from .synthetic import SyntheticSpec, generate_synthetic_benchmark

log = logging.getLogger("chainqa")


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="flat key=value config file")
    g.add_argument("--preset", choices=("paper", "desk"), default=None,
                   help="base hyperparameters when no checkpoint config exists (default: paper)")
    g.add_argument("--seed", type=int)
    g.add_argument("--checkpoint", help="checkpoint file; reports are written beside it")
    g.add_argument("--kg", help="triples file, one head|relation|tail per line")
    g.add_argument("--qa-train")
    g.add_argument("--qa-dev")
    g.add_argument("--qa-test")
    g.add_argument("--top-n", type=int)
    g.add_argument("--no-reasoner", action="store_true", help="answer with the filter's top-1")
    g.add_argument("--no-attention", action="store_true", help="mean-pool encoder states")
    g.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="chainqa", description="Two-stage multi-hop KGQA over relational chains.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-kge", parents=[common], help="train ComplEx embeddings")
    sub.add_parser("train-filter", parents=[common], help="train the answer filter")
    bp = sub.add_parser("build-pairs", parents=[common], help="write reasoner training pairs")
    bp.add_argument("--pairs", help="output file (default: <checkpoint>.pairs.tsv)")
    tr = sub.add_parser("train-reasoner", parents=[common], help="train the chain reasoner")
    tr.add_argument("--pairs", help="pair file (default: <checkpoint>.pairs.tsv, rebuilt if absent)")
    ans = sub.add_parser("answer", parents=[common], help="answer one question")
    ans.add_argument("question", help="question text, topic in [brackets] unless --topic is given")
    ans.add_argument("--topic")
    sub.add_parser("eval", parents=[common], help="evaluate on --qa-test")
    syn = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark")
    syn.add_argument("--out", required=True, help="output directory")
    syn.add_argument("--hops", default="2", help="comma-separated hop counts (default: 2)")
    sub.add_parser("ablate-half", parents=[common], help="full vs half KG comparison")
    sw = sub.add_parser("sweep-topn", parents=[common], help="retrain the reasoner for several N")
    sw.add_argument("--n-values", default="5,10,15,20")
    return parser


def resolve_config(args, ckpt: Checkpoint | None = None) -> PipelineConfig:
    if ckpt is not None and ckpt.config:
        config = PipelineConfig.from_mapping(ckpt.config)
    elif args.preset == "desk":
        config = PipelineConfig(**DESK_PRESET)
    else:
        config = PipelineConfig()
    if args.config:
        config = PipelineConfig.from_file(args.config, config)
    flags = {"seed": args.seed, "kg": args.kg, "qa_train": args.qa_train, "qa_dev": args.qa_dev,
             "qa_test": args.qa_test, "top_n": args.top_n, "checkpoint": args.checkpoint}
    config = config.replace(**{k: v for k, v in flags.items() if v is not None})
    if args.no_reasoner:
        config = config.replace(use_reasoner=False)
    if args.no_attention:
        config = config.replace(attention=False)
    return config


def _need(config: PipelineConfig, *names: str) -> None:
    missing = [n for n in names if not getattr(config, n)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _emit(rows: Sequence[Sequence], header: Sequence[str] | None, config: PipelineConfig, name: str) -> None:
    lines = ["\t".join(header)] if header else []
    lines += ["\t".join(str(c) for c in row) for row in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if config.checkpoint:
        path = Path(f"{config.checkpoint}.{name}.txt")
        path.write_text(f"# {name}\n" + "".join(f"# {k}={v}\n" for k, v in sorted(config.to_mapping().items()))
                        + text, encoding="utf-8")


def _graph(config: PipelineConfig):
    _need(config, "kg")
    return prepare_graph(load_triples(config.kg), config)


def _load(config_args) -> tuple[Checkpoint, PipelineConfig]:
    if not config_args.checkpoint:
        raise UsageError("missing required option: --checkpoint")
    ckpt = load_checkpoint(config_args.checkpoint)
    return ckpt, resolve_config(config_args, ckpt)


def _pipeline(ckpt: Checkpoint, config: PipelineConfig) -> Pipeline:
    if ckpt.filter is None:
        raise UsageError("checkpoint has no filter; run train-filter first")
    return Pipeline(_graph(config), ckpt.table, ckpt.filter, ckpt.reasoner, config.top_n,
                    config.use_reasoner, config.max_chain_len)


def cmd_train_kge(args) -> None:
    config = resolve_config(args)
    _need(config, "checkpoint")
    graph = _graph(config)
    losses = []
    table = train_embeddings(graph, config.kge_config(), on_epoch=lambda e, l: losses.append(l))
    save_checkpoint(Checkpoint(table, config=config.to_mapping()), config.checkpoint)
    _emit([(i, f"{l:.6f}") for i, l in enumerate(losses)], ("epoch", "loss"), config, "train-kge")


def cmd_train_filter(args) -> None:
    ckpt, config = _load(args)
    _need(config, "qa_train")
    graph = _graph(config)
    dev = load_qa_dataset(config.qa_dev) if config.qa_dev else []
    losses = []
    ckpt.filter = train_filter(graph, ckpt.table, load_qa_dataset(config.qa_train), config.filter_config(),
                               dev, on_epoch=lambda e, l: losses.append(l))
    ckpt.reasoner, ckpt.config = None, config.to_mapping()
    save_checkpoint(ckpt, config.checkpoint)
    _emit([(i, f"{l:.6f}") for i, l in enumerate(losses)], ("epoch", "loss"), config, "train-filter")


def _build_pairs(pipe: Pipeline, config: PipelineConfig):
    _need(config, "qa_train")
    resolved, _ = resolve(load_qa_dataset(config.qa_train), pipe.kg)
    rankings = rank_examples(pipe.filter, resolved)
    return build_training_pairs(rankings, [r.topic_id for r in resolved], [r.answer_ids for r in resolved],
                                pipe.kg, config.top_n, config.max_chain_len, [r.index for r in resolved])


def cmd_build_pairs(args) -> None:
    ckpt, config = _load(args)
    pairs, stats = _build_pairs(_pipeline(ckpt, config), config)
    write_pairs(pairs, args.pairs or f"{config.checkpoint}.pairs.tsv")
    _emit(list(vars(stats).items()), ("counter", "value"), config, "build-pairs")


def cmd_train_reasoner(args) -> None:
    ckpt, config = _load(args)
    _need(config, "qa_train")
    pipe = _pipeline(ckpt, config)
    path = Path(args.pairs or f"{config.checkpoint}.pairs.tsv")
    pairs = read_pairs(path) if path.exists() else _build_pairs(pipe, config)[0]
    dev = rerank_items(pipe, load_qa_dataset(config.qa_dev)) if config.qa_dev else []
    losses = []
    ckpt.reasoner = train_reasoner(pairs, load_qa_dataset(config.qa_train), ckpt.table, config.reasoner_config(),
                                   dev, on_epoch=lambda e, l: losses.append(l))
    ckpt.config = config.to_mapping()
    save_checkpoint(ckpt, config.checkpoint)
    _emit([(i, f"{l:.6f}") for i, l in enumerate(losses)], ("epoch", "loss"), config, "train-reasoner")


def cmd_answer(args) -> None:
    ckpt, config = _load(args)
    pipe = _pipeline(ckpt, config)
    question, topic = args.question, args.topic
    if topic is None:
        start, end = question.find("["), question.find("]")
        if start < 0 or end < start:
            raise UsageError("give the topic in [brackets] or with --topic")
        topic = question[start + 1:end].strip()
    _, trace = answer_question(pipe, question, topic)
    rows = [(i + 1, c.entity, f"{c.filter_score:.6f}", "" if c.chain is None else ",".join(c.chain),
             "" if c.similarity is None else f"{c.similarity:.6g}") for i, c in enumerate(trace.candidates)]
    sys.stdout.write(f"answer\t{trace.answer}\n")
    _emit(rows, ("rank", "entity", "filter_score", "chain", "similarity"), config, "answer")


def cmd_eval(args) -> None:
    ckpt, config = _load(args)
    _need(config, "qa_test")
    report = evaluate(_pipeline(ckpt, config), load_qa_dataset(config.qa_test))
    _emit(report.rows(), ("metric", "value"), config, "eval")


def cmd_synth(args) -> None:
    config = resolve_config(args)
    hops = tuple(int(h) for h in args.hops.split(","))
    bench = generate_synthetic_benchmark(SyntheticSpec(hops=hops), config.seed)
    bench.write(args.out)
    rows = [("entities", bench.kg.n_entities), ("relations", bench.kg.n_relations),
            ("triples", len(bench.kg.triples)), ("train", len(bench.train)), ("dev", len(bench.dev)),
            ("test", len(bench.test))]
    _emit(rows, ("item", "count"), config, "synth")


def _splits(config: PipelineConfig):
    _need(config, "kg", "qa_train", "qa_test")
    dev = load_qa_dataset(config.qa_dev) if config.qa_dev else []
    return load_triples(config.kg), load_qa_dataset(config.qa_train), dev, load_qa_dataset(config.qa_test)


def cmd_ablate_half(args) -> None:
    config = resolve_config(args)
    report = run_half_ablation(*_splits(config), config)
    _emit(report.rows(), ("setting", "forward_triples", "hit@1", "filter_hit@1", f"filter_hit@{config.top_n}"),
          config, "ablate-half")


def cmd_sweep_topn(args) -> None:
    if args.checkpoint:
        ckpt, config = _load(args)
        stage_one = _pipeline(ckpt, config)
        _, train, dev, test = _splits(config)
    else:
        config = resolve_config(args)
        kg, train, dev, test = _splits(config)
        stage_one = train_pipeline(kg, train, dev, config.replace(use_reasoner=False)).pipeline
    n_values = [int(n) for n in args.n_values.split(",")]
    rows = run_topn_sweep(stage_one, train, dev, test, config, n_values)
    _emit([(r.n, f"{r.hit1:.4f}", f"{r.filter_hit_n:.4f}", r.pairs) for r in rows],
          ("top_n", "hit@1", "filter_hit@N", "pairs"), config, "sweep-topn")


COMMANDS = {
    "train-kge": cmd_train_kge, "train-filter": cmd_train_filter, "build-pairs": cmd_build_pairs,
    "train-reasoner": cmd_train_reasoner, "answer": cmd_answer, "eval": cmd_eval, "synth": cmd_synth,
    "ablate-half": cmd_ablate_half, "sweep-topn": cmd_sweep_topn,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"chainqa {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
