"""Stage two: Siamese re-ranking of candidates by question / relational-chain similarity."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .answer_filter import ScoredCandidate
from .dataset import QAExample
from .embedding import ComplexEmbeddingTable
from .encoder import QuestionEncoder, SequenceEncoder, TokenSequence, Vocabulary, tokenize
from .kg import KnowledgeGraph, RelationalChain, chains_from
from .training import restore, snapshot

log = logging.getLogger(__name__)


@dataclass
class ReasonerTrainConfig:
    hidden: int = 256
    epochs: int = 120
    batch_size: int = 32
    optimizer: str = "sgd"
    learning_rate: float = 1e-5
    dropout: float = 0.3
    eval_every: int = 10
    patience: int = 3
    attention: bool = True
    seed: int = 0


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None):
        w = ad.xavier_init((in_dim, out_dim), rng) if rng is not None else np.zeros((in_dim, out_dim))
        self.w = ad.parameter(w)
        self.b = ad.parameter(np.zeros(out_dim))

    def named_parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class ReasonerModel:
    """Question tower (embeddings, BiLSTM, attention, fc1-relu-dropout-fc2) and
    chain tower (frozen relation embeddings, BiLSTM, attention)."""

    def __init__(self, table: ComplexEmbeddingTable, vocab: Vocabulary, hidden: int,
                 rng: np.random.Generator | None = None, dropout: float = 0.3, attention: bool = True):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.vocab = vocab
        self.dropout = dropout
        self.relations = table.relation_matrix()  # frozen copy, (m, 2d)
        self.question = QuestionEncoder(len(vocab), hidden, rng, attention)
        width = self.question.output_dim
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)
        self.chain = SequenceEncoder(self.relations.shape[1], hidden, rng, attention)

    @property
    def hidden(self) -> int:
        return self.question.hidden

    @property
    def attention(self) -> bool:
        return self.chain.attention

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = self.question.named_parameters("question")
        out.update(self.fc1.named_parameters("fc1"))
        out.update(self.fc2.named_parameters("fc2"))
        out.update(self.chain.named_parameters("chain"))
        return out

    def tokens(self, example: QAExample) -> TokenSequence:
        return tokenize(example.text, example.topic, self.vocab, mask_topic=True)

    def question_vectors(self, ids: np.ndarray, training: bool = False,
                         rng: np.random.Generator | None = None) -> ad.Tensor:
        """(batch, length) token ids of equal length -> (batch, 2*hidden)."""
        enc = self.question.encode_batch(ids)
        hidden = ad.dropout(ad.relu(self.fc1(enc)), self.dropout, training, rng)
        return self.fc2(hidden)

    def chain_vectors(self, chains: np.ndarray) -> ad.Tensor:
        """(batch, M) relation ids of equal length M >= 1 -> (batch, 2*hidden)."""
        chains = np.asarray(chains, dtype=np.int64)
        if chains.ndim == 1:
            chains = chains[None, :]
        if chains.shape[1] == 0:
            raise ad.ShapeError("empty relational chain")
        if chains.min() < 0 or chains.max() >= len(self.relations):
            raise ValueError(f"relation id outside 0..{len(self.relations) - 1}")
        xs = [ad.Tensor(self.relations[chains[:, j]]) for j in range(chains.shape[1])]
        return self.chain.encode(xs)


def encode_question_side(model: ReasonerModel, tokens: TokenSequence, training: bool = False,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    with ad.no_grad():
        return model.question_vectors(np.asarray([tokens.ids]), training, rng).data[0]


def encode_chain_side(model: ReasonerModel, chain: RelationalChain) -> np.ndarray:
    if len(chain) == 0:
        raise ad.ShapeError("empty relational chain")
    with ad.no_grad():
        return model.chain_vectors(np.asarray([chain])).data[0]


def similarity_tensor(vq: ad.Tensor, vr: ad.Tensor) -> ad.Tensor:
    if vq.shape != vr.shape:
        raise ad.ShapeError(f"similarity: shapes {vq.shape} and {vr.shape} differ")
    return ad.exp(ad.neg(ad.l2_norm(ad.sub(vq, vr), axis=-1)))


def similarity(vq: np.ndarray, vr: np.ndarray) -> float:
    """exp(-||vq - vr||_2), in (0, 1]."""
    vq, vr = np.asarray(vq, dtype=np.float64), np.asarray(vr, dtype=np.float64)
    if vq.shape != vr.shape:
        raise ad.ShapeError(f"similarity: shapes {vq.shape} and {vr.shape} differ")
    return float(np.exp(-np.linalg.norm(vq - vr)))


def _grouped(seqs: Sequence[tuple], encode: Callable[[np.ndarray], ad.Tensor]) -> ad.Tensor:
    """Encode variable-length sequences by length group, rows back in input order."""
    lengths = np.array([len(s) for s in seqs])
    order, parts = [], []
    for length in np.unique(lengths):
        idx = np.nonzero(lengths == length)[0]
        parts.append(encode(np.asarray([seqs[i] for i in idx])))
        order.extend(idx)
    stacked = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    inverse = np.empty(len(order), dtype=np.int64)
    inverse[np.asarray(order)] = np.arange(len(order))
    return ad.take_rows(stacked, inverse)


def pair_similarities(model: ReasonerModel, questions: Sequence[tuple], chains: Sequence[tuple],
                      q_index: np.ndarray, c_index: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> ad.Tensor:
    """Similarity of question ``q_index[i]`` with chain ``c_index[i]`` for each i.

    Each distinct question and chain is encoded once.
    """
    vq = _grouped(questions, lambda ids: model.question_vectors(ids, training, rng))
    vr = _grouped(chains, model.chain_vectors)
    return similarity_tensor(ad.take_rows(vq, q_index), ad.take_rows(vr, c_index))


# ---------------------------------------------------------------- training pairs

class TrainingPair(NamedTuple):
    example: int
    candidate: int
    chain: RelationalChain
    label: int


@dataclass
class PairStats:
    positives: int = 0
    negatives: int = 0
    unreachable: int = 0
    dropped_examples: int = 0
    candidates: int = 0


def build_training_pairs(rankings: Sequence[Sequence[ScoredCandidate]], topics: Sequence[int],
                         gold: Sequence[frozenset], kg: KnowledgeGraph, n: int, max_len: int = 4,
                         example_ids: Sequence[int] | None = None) -> tuple[list[TrainingPair], PairStats]:
    """Label each top-``n`` candidate's shortest chain by answer membership."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    example_ids = list(range(len(rankings))) if example_ids is None else list(example_ids)
    pairs: list[TrainingPair] = []
    stats = PairStats()
    cache: dict[int, dict[int, RelationalChain]] = {}
    for ex_id, ranked, topic, answers in zip(example_ids, rankings, topics, gold):
        if topic not in cache:
            cache[topic] = chains_from(kg, topic, max_len)
        reach = cache[topic]
        made = 0
        for cand in ranked[:n]:
            stats.candidates += 1
            chain = reach.get(cand.entity)
            if not chain:
                stats.unreachable += 1
                continue
            label = int(cand.entity in answers)
            pairs.append(TrainingPair(ex_id, cand.entity, chain, label))
            made += 1
            if label:
                stats.positives += 1
            else:
                stats.negatives += 1
        if not made:
            stats.dropped_examples += 1
    return pairs, stats


def write_pairs(pairs: Iterable[TrainingPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.example}\t{p.candidate}\t{','.join(map(str, p.chain))}\t{p.label}\n")


def read_pairs(path) -> list[TrainingPair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
            chain = tuple(int(x) for x in fields[2].split(",") if x)
            out.append(TrainingPair(int(fields[0]), int(fields[1]), chain, int(fields[3])))
    return out


# ---------------------------------------------------------------- ranking

@dataclass
class RerankItem:
    """One question with its filter candidates and their chains (``None`` = unreachable)."""
    example: QAExample
    candidates: list[tuple[ScoredCandidate, Optional[RelationalChain]]]
    gold: frozenset = field(default_factory=frozenset)


def order_candidates(candidates: Sequence[tuple[ScoredCandidate, Optional[RelationalChain]]],
                     sims: Sequence[Optional[float]]) -> list[int]:
    """Indices of candidates, best first.

    Reachable candidates come first by similarity, then filter score, then
    entity id; unreachable ones follow in filter order.
    """
    reach = [i for i, s in enumerate(sims) if s is not None]
    rest = [i for i, s in enumerate(sims) if s is None]
    reach.sort(key=lambda i: (-sims[i], -candidates[i][0].score, candidates[i][0].entity))
    rest.sort(key=lambda i: (-candidates[i][0].score, candidates[i][0].entity))
    return reach + rest


def candidate_similarities(model: ReasonerModel, tokens: TokenSequence,
                           candidates: Sequence[tuple[ScoredCandidate, Optional[RelationalChain]]]
                           ) -> list[Optional[float]]:
    chains = [c for _, c in candidates if c]
    if not chains:
        return [None] * len(candidates)
    distinct = sorted(set(chains))
    pos = {c: i for i, c in enumerate(distinct)}
    with ad.no_grad():
        sims = pair_similarities(model, [tokens.ids], distinct, np.zeros(len(distinct), dtype=np.int64),
                                 np.arange(len(distinct))).data
    return [float(sims[pos[c]]) if c else None for _, c in candidates]


def rank_candidates(model: ReasonerModel, tokens: TokenSequence,
                    candidates: Sequence[tuple[ScoredCandidate, Optional[RelationalChain]]]) -> int:
    if not candidates:
        raise ValueError("no candidates to rank")
    sims = candidate_similarities(model, tokens, candidates)
    return candidates[order_candidates(candidates, sims)[0]][0].entity


def reasoner_hit_at_1(model: ReasonerModel, items: Sequence[RerankItem]) -> float:
    if not items:
        raise ValueError("empty evaluation set")
    hits = 0
    for item in items:
        if item.candidates:
            hits += rank_candidates(model, model.tokens(item.example), item.candidates) in item.gold
    return hits / len(items)


def mse_loss(model: ReasonerModel, questions: Sequence[tuple], chains: Sequence[tuple],
             q_index: np.ndarray, c_index: np.ndarray, labels: np.ndarray, training: bool = False,
             rng: np.random.Generator | None = None) -> ad.Tensor:
    sims = pair_similarities(model, questions, chains, q_index, c_index, training, rng)
    return ad.mean(ad.square(ad.sub(sims, np.asarray(labels, dtype=np.float64))))


def train_reasoner(pairs: Sequence[TrainingPair], examples: dict[int, QAExample] | Sequence[QAExample],
                   table: ComplexEmbeddingTable, config: ReasonerTrainConfig,
                   dev: Sequence[RerankItem] = (),
                   on_epoch: Callable[[int, float], None] | None = None) -> ReasonerModel:
    """Fit both towers so similarity approaches 1 on positives and 0 on negatives."""
    labels = {p.label for p in pairs}
    if labels != {0, 1}:
        raise ValueError(f"training pairs need both labels, got {sorted(labels)}")
    lookup = dict(enumerate(examples)) if not isinstance(examples, dict) else examples
    rng = np.random.default_rng(config.seed)
    used = sorted({p.example for p in pairs})
    vocab = Vocabulary.build(((lookup[i].text, lookup[i].topic) for i in used), mask_topic=True)
    model = ReasonerModel(table, vocab, config.hidden, rng, config.dropout, config.attention)
    params = model.named_parameters()
    opt = ad.Optimizer(params.values(), config.optimizer, config.learning_rate)
    tokens = {i: model.tokens(lookup[i]).ids for i in used}
    best, best_hit, stale = None, -1.0, 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            qs = sorted({p.example for p in batch})
            cs = sorted({p.chain for p in batch})
            qpos = {e: i for i, e in enumerate(qs)}
            cpos = {c: i for i, c in enumerate(cs)}
            opt.zero_grad()
            loss = mse_loss(model, [tokens[e] for e in qs], cs,
                            np.array([qpos[p.example] for p in batch]),
                            np.array([cpos[p.chain] for p in batch]),
                            np.array([p.label for p in batch]), True, rng)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite reasoner loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
        if on_epoch is not None:
            on_epoch(epoch, total / len(pairs))
        log.debug("reasoner epoch %d loss %.5f", epoch, total / len(pairs))
        if dev and (epoch + 1) % config.eval_every == 0:
            hit = reasoner_hit_at_1(model, dev)
            log.info("reasoner epoch %d dev hit@1 %.4f", epoch + 1, hit)
            if hit > best_hit:
                best, best_hit, stale = snapshot(params), hit, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best is not None:
        restore(params, best)
    return model
