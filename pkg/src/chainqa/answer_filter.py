"""Stage one: score every entity against (topic, question) and keep the top N."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .dataset import QAExample, ResolvedExample, resolve
from .embedding import ComplexEmbeddingTable, complex_product
from .encoder import Projection, QuestionEncoder, TokenSequence, Vocabulary, tokenize
from .kg import KnowledgeGraph, UnknownEntityError
from .training import length_batches, restore, snapshot

log = logging.getLogger(__name__)


class ScoredCandidate(NamedTuple):
    entity: int
    score: float


@dataclass
class FilterTrainConfig:
    hidden: int = 256
    epochs: int = 200
    batch_size: int = 128
    optimizer: str = "sgd"
    learning_rate: float = 1e-5
    negative_weight: float = 1.0
    eval_every: int = 10
    patience: int = 3
    mask_topic: bool = False
    attention: bool = True
    seed: int = 0


class FilterModel:
    """Question encoder + projection into the relation slot of a frozen ComplEx table."""

    def __init__(self, table: ComplexEmbeddingTable, vocab: Vocabulary, hidden: int,
                 rng: np.random.Generator | None = None, attention: bool = True,
                 mask_topic: bool = False):
        self.table = table
        self.vocab = vocab
        self.mask_topic = mask_topic
        self.encoder = QuestionEncoder(len(vocab), hidden, rng, attention)
        self.projection = Projection(self.encoder.output_dim, table.dim, rng)
        self._entities = table.entity_matrix()

    @property
    def hidden(self) -> int:
        return self.encoder.hidden

    def named_parameters(self) -> dict[str, ad.Tensor]:
        out = self.encoder.named_parameters("encoder")
        out.update(self.projection.named_parameters("projection"))
        return out

    def tokens(self, example: QAExample) -> TokenSequence:
        return tokenize(example.text, example.topic, self.vocab, self.mask_topic)

    def relation_vectors(self, ids: np.ndarray) -> ad.Tensor:
        """Predicted complex relation per question, (batch, 2d) with real block first."""
        return self.projection(self.encoder.encode_batch(ids))

    def score_tensor(self, topics: np.ndarray, ids: np.ndarray) -> ad.Tensor:
        """(batch, n_entities) ComplEx scores of every entity as tail."""
        d = self.table.dim
        rel = self.relation_vectors(ids)
        topics = np.asarray(topics, dtype=np.int64)
        h_re = self.table.entity_real[topics]
        h_im = self.table.entity_imag[topics]
        hr_re, hr_im = complex_product(h_re, h_im, rel[:, :d], rel[:, d:])
        return ad.matmul(ad.concat([hr_re, hr_im], axis=1), self._entities.T)

    def score_matrix(self, topics: np.ndarray, ids: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.score_tensor(topics, ids).data


def rank_scores(scores: np.ndarray, topic: int) -> list[ScoredCandidate]:
    """Descending by score, ties by ascending entity id, topic left out."""
    ids = np.arange(len(scores))
    order = np.lexsort((ids, -scores))
    return [ScoredCandidate(int(e), float(scores[e])) for e in order if e != topic]


def score_all_entities(model: FilterModel, topic: int, tokens: TokenSequence) -> list[ScoredCandidate]:
    if not 0 <= topic < model.table.n_entities:
        raise UnknownEntityError(topic)
    scores = model.score_matrix(np.array([topic]), np.asarray([tokens.ids]))[0]
    return rank_scores(scores, topic)


def top_n(ranked: Sequence[ScoredCandidate], n: int) -> list[ScoredCandidate]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return list(ranked[:n])


def rank_examples(model: FilterModel, examples: Sequence[ResolvedExample],
                  batch_size: int = 256) -> list[list[ScoredCandidate]]:
    """Full filter ranking for each example, in input order."""
    toks = [model.tokens(r.example).ids for r in examples]
    out: list[list[ScoredCandidate] | None] = [None] * len(examples)
    for idx in length_batches([len(t) for t in toks], batch_size):
        topics = np.array([examples[i].topic_id for i in idx])
        scores = model.score_matrix(topics, np.asarray([toks[i] for i in idx]))
        for row, i in enumerate(idx):
            out[i] = rank_scores(scores[row], examples[i].topic_id)
    return out


def hits_from_rankings(rankings: Sequence[Sequence[ScoredCandidate]],
                       gold: Sequence[frozenset], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not rankings:
        raise ValueError("empty evaluation set")
    hit = sum(any(c.entity in g for c in ranked[:k]) for ranked, g in zip(rankings, gold))
    return hit / len(rankings)


def filter_hit_at_k(model: FilterModel, eval_set: Sequence[ResolvedExample], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not eval_set:
        raise ValueError("empty evaluation set")
    return hits_from_rankings(rank_examples(model, eval_set), [r.answer_ids for r in eval_set], k)


def filter_loss(model: FilterModel, topics: np.ndarray, ids: np.ndarray,
                answer_sets: Sequence[frozenset], negative_weight: float = 1.0) -> ad.Tensor:
    """Mean binary cross-entropy of sigmoid(score) against answer membership.

    Every entity other than the topic is a target; non-answers are scaled by
    ``negative_weight``.
    """
    scores = model.score_tensor(topics, ids)
    n = scores.shape[1]
    target = np.zeros((len(topics), n))
    weight = np.full((len(topics), n), negative_weight)
    for row, (topic, answers) in enumerate(zip(topics, answer_sets)):
        target[row, list(answers)] = 1.0
        weight[row, list(answers)] = 1.0
        weight[row, topic] = 0.0
    # BCE with logits: softplus(s) - y*s
    per = ad.sub(ad.softplus(scores), ad.mul(scores, target))
    return ad.mul(ad.sum(ad.mul(per, weight)), 1.0 / weight.sum())


def train_filter(kg: KnowledgeGraph, table: ComplexEmbeddingTable, train_set: Sequence[QAExample],
                 config: FilterTrainConfig, dev_set: Sequence[QAExample] = (),
                 on_epoch: Callable[[int, float], None] | None = None) -> FilterModel:
    """Fit encoder + projection; the embedding table is never written."""
    table.check_graph(kg)
    train, _ = resolve(train_set, kg)
    if not train:
        raise ValueError("no usable training examples (all topics/answers unresolvable)")
    dev, _ = resolve(dev_set, kg) if dev_set else ([], 0)
    rng = np.random.default_rng(config.seed)
    vocab = Vocabulary.build(((r.example.text, r.example.topic) for r in train), config.mask_topic)
    model = FilterModel(table, vocab, config.hidden, rng, config.attention, config.mask_topic)
    params = model.named_parameters()
    opt = ad.Optimizer(params.values(), config.optimizer, config.learning_rate)
    toks = [model.tokens(r.example).ids for r in train]
    best, best_hit, stale = None, -1.0, 0
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in length_batches([len(t) for t in toks], config.batch_size, rng):
            opt.zero_grad()
            loss = filter_loss(model, np.array([train[i].topic_id for i in idx]),
                               np.asarray([toks[i] for i in idx]),
                               [train[i].answer_ids for i in idx], config.negative_weight)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite filter loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        if on_epoch is not None:
            on_epoch(epoch, total / count)
        log.debug("filter epoch %d loss %.5f", epoch, total / count)
        if dev and (epoch + 1) % config.eval_every == 0:
            hit = filter_hit_at_k(model, dev, 1)
            log.info("filter epoch %d dev hit@1 %.4f", epoch + 1, hit)
            if hit > best_hit:
                best, best_hit, stale = snapshot(params), hit, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best is not None:
        restore(params, best)
    return model
