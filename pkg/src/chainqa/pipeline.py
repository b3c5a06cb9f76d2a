"""End-to-end question answering: filter, top-N, shortest chains, re-rank."""
from __future__ import annotations

import configparser
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .answer_filter import (FilterModel, FilterTrainConfig, ScoredCandidate, hits_from_rankings,
                            rank_examples, score_all_entities, train_filter)
from .dataset import QAExample, resolve
from .embedding import ComplexEmbeddingTable, EmbeddingTrainConfig, train_embeddings
from .kg import KnowledgeGraph, RelationalChain, augment_reverse, chains_from, prune_half
from .reasoner import (PairStats, ReasonerModel, ReasonerTrainConfig, RerankItem, build_training_pairs,
                       candidate_similarities, order_candidates, train_reasoner)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    kg: Optional[str] = None
    qa_train: Optional[str] = None
    qa_dev: Optional[str] = None
    qa_test: Optional[str] = None
    checkpoint: Optional[str] = None
    dim: int = 200
    hidden: int = 256
    dropout: float = 0.3
    negatives_per_positive: int = 50
    kge_epochs: int = 100
    kge_batch: int = 128
    kge_optimizer: str = "adam"
    kge_lr: float = 0.01
    kge_l2: float = 1e-3
    filter_epochs: int = 200
    filter_batch: int = 128
    filter_optimizer: str = "sgd"
    filter_lr: float = 1e-5
    filter_hidden: Optional[int] = None
    reasoner_epochs: int = 120
    reasoner_batch: int = 32
    reasoner_optimizer: str = "sgd"
    reasoner_lr: float = 1e-5
    reasoner_hidden: Optional[int] = None
    eval_every: int = 10
    patience: int = 3
    top_n: int = 5
    max_chain_len: int = 4
    seed: int = 0
    half: bool = False
    keep_probability: float = 0.5
    half_reuse_embeddings: bool = False  # half setting: keep the full-KG table instead of retraining
    use_reasoner: bool = True
    attention: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("dim", "hidden", "negatives_per_positive", "kge_epochs", "kge_batch", "filter_epochs",
                     "filter_batch", "reasoner_epochs", "reasoner_batch", "eval_every", "patience",
                     "top_n", "max_chain_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("filter_hidden", "reasoner_hidden"):
            if getattr(self, name) is not None and getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.keep_probability <= 1.0:
            raise ValueError(f"keep_probability must be in [0, 1], got {self.keep_probability}")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Build from string values, coercing each to the field's type."""
        base = base or cls()
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        changes = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            changes[key] = _coerce(kinds[key], raw.strip(), key)
        return base.replace(**changes)

    @classmethod
    def from_file(cls, path: str | Path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Flat ``key=value`` file; ``#`` starts a comment line."""
        parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        parser.read_string("[pipeline]\n" + Path(path).read_text(encoding="utf-8"))
        return cls.from_mapping(dict(parser["pipeline"]), base)

    def to_mapping(self) -> dict[str, str]:
        return {k: ("" if v is None else str(v)) for k, v in dataclasses.asdict(self).items()}

    def kge_config(self) -> EmbeddingTrainConfig:
        return EmbeddingTrainConfig(dim=self.dim, negatives_per_positive=self.negatives_per_positive,
                                    epochs=self.kge_epochs, batch_size=self.kge_batch,
                                    optimizer=self.kge_optimizer, learning_rate=self.kge_lr,
                                    l2_weight=self.kge_l2, seed=self.seed)

    def filter_config(self) -> FilterTrainConfig:
        return FilterTrainConfig(hidden=self.filter_hidden or self.hidden, epochs=self.filter_epochs,
                                 batch_size=self.filter_batch, optimizer=self.filter_optimizer,
                                 learning_rate=self.filter_lr, eval_every=self.eval_every,
                                 patience=self.patience, attention=self.attention, seed=self.seed)

    def reasoner_config(self) -> ReasonerTrainConfig:
        return ReasonerTrainConfig(hidden=self.reasoner_hidden or self.hidden, epochs=self.reasoner_epochs,
                                   batch_size=self.reasoner_batch, optimizer=self.reasoner_optimizer,
                                   learning_rate=self.reasoner_lr, dropout=self.dropout,
                                   eval_every=self.eval_every, patience=self.patience,
                                   attention=self.attention, seed=self.seed)


def _coerce(kind, raw: str, key: str):
    kind = str(kind)
    if raw == "" and "Optional" in kind:
        return None
    try:
        if "bool" in kind:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw


# Desk-scale settings: small recurrent widths, Adam instead of SGD(1e-5) and
# short schedules, so the synthetic benchmark trains in a few CPU minutes.
DESK_PRESET = dict(
    kge_epochs=40, kge_batch=256, kge_l2=1e-4,
    hidden=32, filter_epochs=30, filter_batch=64, filter_optimizer="adam", filter_lr=0.003,
    reasoner_epochs=4, reasoner_batch=64, reasoner_optimizer="adam", reasoner_lr=0.003,
    eval_every=2, patience=100,
)


def desk_config(**overrides) -> PipelineConfig:
    return PipelineConfig(**{**DESK_PRESET, **overrides})


# ---------------------------------------------------------------- inference

@dataclass
class CandidateTrace:
    entity: str
    filter_score: float
    chain: Optional[tuple[str, ...]]
    similarity: Optional[float]


@dataclass
class Trace:
    question: str
    topic: str
    candidates: list[CandidateTrace]
    answer: str
    gold: tuple[str, ...] = ()


@dataclass
class Pipeline:
    kg: KnowledgeGraph  # augmented with reverse relations
    table: ComplexEmbeddingTable
    filter: FilterModel
    reasoner: Optional[ReasonerModel] = None
    top_n: int = 5
    use_reasoner: bool = True
    max_chain_len: int = 4
    _chains: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")
        if self.kg.n_entities == 0:
            raise ValueError("empty knowledge graph")
        self.table.check_graph(self.kg)

    @property
    def reranks(self) -> bool:
        return self.use_reasoner and self.reasoner is not None

    def chains(self, topic: int) -> dict[int, RelationalChain]:
        if topic not in self._chains:
            self._chains[topic] = chains_from(self.kg, topic, self.max_chain_len)
        return self._chains[topic]

    def candidates(self, topic: int, ranked: Sequence[ScoredCandidate]
                   ) -> list[tuple[ScoredCandidate, Optional[RelationalChain]]]:
        reach = self.chains(topic)
        return [(c, reach.get(c.entity)) for c in ranked[:self.top_n]]

    def final_ranking(self, example: QAExample, topic: int, ranked: Sequence[ScoredCandidate]
                      ) -> tuple[list[int], list, list[Optional[float]]]:
        """Entity ids best first: the re-ranked top-N, then the rest of the filter order."""
        cands = self.candidates(topic, ranked)
        if not self.reranks:
            return [c.entity for c in ranked], cands, [None] * len(cands)
        sims = candidate_similarities(self.reasoner, self.reasoner.tokens(example), cands)
        head = [cands[i][0].entity for i in order_candidates(cands, sims)]
        return head + [c.entity for c in ranked[self.top_n:]], cands, sims

    def trace(self, example: QAExample, topic: int, cands, sims, answer: int,
              gold: Sequence[str] = ()) -> Trace:
        ents, rels = self.kg.entities, self.kg.relations
        return Trace(example.question, example.topic,
                     [CandidateTrace(ents[c.entity], c.score,
                                     None if chain is None else tuple(rels[r] for r in chain), s)
                      for (c, chain), s in zip(cands, sims)],
                     ents[answer], tuple(gold))


def answer_question(pipeline: Pipeline, question: str, topic: str) -> tuple[int, Trace]:
    """Answer one question whose topic entity is ``topic`` (brackets optional in ``question``)."""
    if "[" not in question:
        question = question.replace(topic, f"[{topic}]", 1) if topic in question else f"{question} [{topic}]"
    example = QAExample(question, topic, (topic,))
    topic_id = pipeline.kg.entity_id(topic)
    ranked = score_all_entities(pipeline.filter, topic_id, pipeline.filter.tokens(example))
    order, cands, sims = pipeline.final_ranking(example, topic_id, ranked)
    return order[0], pipeline.trace(example, topic_id, cands, sims, order[0])


@dataclass
class EvaluationReport:
    hits: dict[int, float]
    filter_hits: dict[int, float]
    traces: list[Trace]
    evaluated: int
    skipped: int
    unreachable: int
    seconds: float
    top_n: int

    @property
    def hit1(self) -> float:
        return self.hits[1]

    def rows(self) -> list[tuple[str, str]]:
        out = [(f"hit@{k}", f"{v:.4f}") for k, v in sorted(self.hits.items())]
        out += [(f"filter_hit@{k}", f"{v:.4f}") for k, v in sorted(self.filter_hits.items())]
        out += [("evaluated", str(self.evaluated)), ("skipped", str(self.skipped)),
                ("unreachable", str(self.unreachable)), ("top_n", str(self.top_n)),
                ("seconds", f"{self.seconds:.1f}")]
        return out


def evaluate(pipeline: Pipeline, eval_set: Sequence[QAExample], ks: Sequence[int] = (1, 5, 10)) -> EvaluationReport:
    """hit@k of the final ranking, with filter-only hits (including hit@N) alongside."""
    start = time.perf_counter()
    if not eval_set:
        raise ValueError("empty evaluation set")
    resolved, skipped = resolve(eval_set, pipeline.kg)
    if not resolved:
        raise ValueError("no evaluable examples (all topics/answers unresolvable)")
    filter_rankings = rank_examples(pipeline.filter, resolved)
    finals, traces, unreachable = [], [], 0
    for r, ranked in zip(resolved, filter_rankings):
        order, cands, sims = pipeline.final_ranking(r.example, r.topic_id, ranked)
        unreachable += sum(chain is None for _, chain in cands)
        finals.append(order)
        traces.append(pipeline.trace(r.example, r.topic_id, cands, sims, order[0], r.example.answers))
    gold = [r.answer_ids for r in resolved]
    hits = {k: sum(any(e in g for e in order[:k]) for order, g in zip(finals, gold)) / len(finals)
            for k in ks}
    filter_ks = sorted(set(ks) | {pipeline.top_n})
    filter_hits = {k: hits_from_rankings(filter_rankings, gold, k) for k in filter_ks}
    return EvaluationReport(hits, filter_hits, traces, len(resolved), skipped, unreachable,
                            time.perf_counter() - start, pipeline.top_n)


# ---------------------------------------------------------------- training

@dataclass
class TrainedPipeline:
    pipeline: Pipeline
    forward_triples: int
    pair_stats: Optional[PairStats] = None
    seconds: dict[str, float] = field(default_factory=dict)


def prepare_graph(kg: KnowledgeGraph, config: PipelineConfig) -> KnowledgeGraph:
    """Apply the half setting (on forward facts) and add reverse edges."""
    if kg.augmented:
        raise ValueError("expected a forward-only graph")
    if config.half:
        kg = prune_half(kg, config.keep_probability, config.seed)
    return augment_reverse(kg)


def rerank_items(pipeline: Pipeline, examples: Sequence[QAExample]) -> list[RerankItem]:
    resolved, _ = resolve(examples, pipeline.kg)
    rankings = rank_examples(pipeline.filter, resolved)
    return [RerankItem(r.example, pipeline.candidates(r.topic_id, ranked), r.answer_ids)
            for r, ranked in zip(resolved, rankings)]


def fit_reasoner(pipeline: Pipeline, train: Sequence[QAExample], dev: Sequence[QAExample],
                 config: PipelineConfig) -> PairStats:
    """Build pairs from the filter's train-split output and train the re-ranker in place."""
    resolved, _ = resolve(train, pipeline.kg)
    rankings = rank_examples(pipeline.filter, resolved)
    pairs, stats = build_training_pairs(rankings, [r.topic_id for r in resolved],
                                        [r.answer_ids for r in resolved], pipeline.kg, pipeline.top_n,
                                        pipeline.max_chain_len, [r.index for r in resolved])
    log.info("reasoner pairs: %s", stats)
    dev_items = rerank_items(pipeline, dev) if dev else []
    pipeline.reasoner = train_reasoner(pairs, list(train), pipeline.table, config.reasoner_config(), dev_items)
    return stats


def train_pipeline(kg: KnowledgeGraph, train: Sequence[QAExample], dev: Sequence[QAExample],
                   config: PipelineConfig, table: ComplexEmbeddingTable | None = None) -> TrainedPipeline:
    """Embeddings, then filter, then pairs, then reasoner, on a forward-only graph.

    A given ``table`` is used as-is and skips embedding training.
    """
    seconds = {}
    t = time.perf_counter()
    graph = prepare_graph(kg, config)
    if table is None:
        table = train_embeddings(graph, config.kge_config())
    seconds["kge"] = time.perf_counter() - t
    t = time.perf_counter()
    filt = train_filter(graph, table, train, config.filter_config(), dev)
    seconds["filter"] = time.perf_counter() - t
    pipeline = Pipeline(graph, table, filt, None, config.top_n, config.use_reasoner, config.max_chain_len)
    stats = None
    if config.use_reasoner:
        t = time.perf_counter()
        stats = fit_reasoner(pipeline, train, dev, config)
        seconds["reasoner"] = time.perf_counter() - t
    return TrainedPipeline(pipeline, len(graph.forward_triples()), stats, seconds)


def filter_only(pipeline: Pipeline) -> Pipeline:
    """The same trained models with re-ranking switched off."""
    return dataclasses.replace(pipeline, use_reasoner=False, _chains=pipeline._chains)


@dataclass
class HalfAblationReport:
    full: EvaluationReport
    half: EvaluationReport
    full_filter: EvaluationReport
    half_filter: EvaluationReport
    full_triples: int
    half_triples: int

    def rows(self) -> list[tuple[str, str, str, str, str]]:
        return [("full", str(self.full_triples), f"{self.full.hit1:.4f}", f"{self.full_filter.hit1:.4f}",
                 f"{self.full.filter_hits[self.full.top_n]:.4f}"),
                ("half", str(self.half_triples), f"{self.half.hit1:.4f}", f"{self.half_filter.hit1:.4f}",
                 f"{self.half.filter_hits[self.half.top_n]:.4f}")]


def run_half_ablation(kg: KnowledgeGraph, train: Sequence[QAExample], dev: Sequence[QAExample],
                      test: Sequence[QAExample], config: PipelineConfig,
                      full: TrainedPipeline | None = None) -> HalfAblationReport:
    """Train and evaluate on the full graph and on its pruned copy with the same seeds."""
    full = full or train_pipeline(kg, train, dev, config.replace(half=False, use_reasoner=True))
    reuse = full.pipeline.table if config.half_reuse_embeddings else None
    half = train_pipeline(kg, train, dev, config.replace(half=True, use_reasoner=True), reuse)
    return HalfAblationReport(evaluate(full.pipeline, test), evaluate(half.pipeline, test),
                              evaluate(filter_only(full.pipeline), test),
                              evaluate(filter_only(half.pipeline), test),
                              full.forward_triples, half.forward_triples)


@dataclass
class TopNRow:
    n: int
    hit1: float
    filter_hit_n: float
    pairs: int


def run_topn_sweep(stage_one: Pipeline, train: Sequence[QAExample], dev: Sequence[QAExample],
                   test: Sequence[QAExample], config: PipelineConfig,
                   n_values: Sequence[int] = (5, 10, 15, 20)) -> list[TopNRow]:
    """Rebuild reasoner pairs and retrain the re-ranker for each N over a fixed filter."""
    rows = []
    for n in n_values:
        pipe = Pipeline(stage_one.kg, stage_one.table, stage_one.filter, None, n, True,
                        stage_one.max_chain_len, stage_one._chains)
        stats = fit_reasoner(pipe, train, dev, config.replace(top_n=n))
        report = evaluate(pipe, test, ks=(1,))
        rows.append(TopNRow(n, report.hit1, report.filter_hits[n], stats.positives + stats.negatives))
    return rows
