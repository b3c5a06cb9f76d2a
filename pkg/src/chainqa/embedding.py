"""ComplEx embeddings: scoring, filtered negative sampling, training, link prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .kg import KnowledgeGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ComplexVector:
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "real", np.asarray(self.real, dtype=np.float64))
        object.__setattr__(self, "imag", np.asarray(self.imag, dtype=np.float64))
        if self.real.shape != self.imag.shape:
            raise ad.ShapeError(f"real part {self.real.shape} vs imaginary part {self.imag.shape}")

    @property
    def dim(self) -> int:
        return self.real.shape[-1]

    def conj(self) -> "ComplexVector":
        return ComplexVector(self.real, -self.imag)

    def as_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def concat(self) -> np.ndarray:
        return np.concatenate([self.real, self.imag], axis=-1)

    @classmethod
    def from_concat(cls, v: np.ndarray) -> "ComplexVector":
        d = v.shape[-1] // 2
        return cls(v[..., :d], v[..., d:])


@dataclass
class ComplexEmbeddingTable:
    entity_real: np.ndarray
    entity_imag: np.ndarray
    relation_real: np.ndarray
    relation_imag: np.ndarray

    @property
    def dim(self) -> int:
        return self.entity_real.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_real.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_real.shape[0]

    @classmethod
    def random(cls, n_entities: int, n_relations: int, dim: int, seed: int = 0) -> "ComplexEmbeddingTable":
        rng = np.random.default_rng(seed)
        return cls(
            ad.xavier_init((n_entities, dim), rng),
            ad.xavier_init((n_entities, dim), rng),
            ad.xavier_init((n_relations, dim), rng),
            ad.xavier_init((n_relations, dim), rng),
        )

    def entity(self, e: int) -> ComplexVector:
        return ComplexVector(self.entity_real[e], self.entity_imag[e])

    def relation(self, r: int) -> ComplexVector:
        return ComplexVector(self.relation_real[r], self.relation_imag[r])

    def entity_matrix(self) -> np.ndarray:
        """Entities as an (n, 2d) real matrix, real block first."""
        return np.concatenate([self.entity_real, self.entity_imag], axis=1)

    def relation_matrix(self) -> np.ndarray:
        return np.concatenate([self.relation_real, self.relation_imag], axis=1)

    def check_graph(self, kg: KnowledgeGraph) -> None:
        if self.n_entities != kg.n_entities or self.n_relations != kg.n_relations:
            raise ValueError(
                f"table has {self.n_entities} entities / {self.n_relations} relations, "
                f"graph has {kg.n_entities} / {kg.n_relations}"
            )

    def copy(self) -> "ComplexEmbeddingTable":
        return ComplexEmbeddingTable(*(a.copy() for a in self.arrays()))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.entity_real, self.entity_imag, self.relation_real, self.relation_imag


def complex_score(h: ComplexVector, r: ComplexVector, t: ComplexVector) -> float:
    """Re(sum_k h_k r_k conj(t_k))."""
    if not h.real.shape == r.real.shape == t.real.shape:
        raise ad.ShapeError(f"dimension mismatch: {h.real.shape}, {r.real.shape}, {t.real.shape}")
    hr_re = h.real * r.real - h.imag * r.imag
    hr_im = h.real * r.imag + h.imag * r.real
    return np.sum(hr_re * t.real + hr_im * t.imag, axis=-1)


def complex_product(h_re, h_im, r_re, r_im) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable elementwise complex product h * r, as (real, imag)."""
    re = ad.sub(ad.mul(h_re, r_re), ad.mul(h_im, r_im))
    im = ad.add(ad.mul(h_re, r_im), ad.mul(h_im, r_re))
    return re, im


def complex_score_tensor(h_re, h_im, r_re, r_im, t_re, t_im) -> ad.Tensor:
    """Differentiable ComplEx score summed over the last axis."""
    hr_re, hr_im = complex_product(h_re, h_im, r_re, r_im)
    return ad.sum(ad.add(ad.mul(hr_re, t_re), ad.mul(hr_im, t_im)), axis=-1)


# ---------------------------------------------------------------- sampling

def sample_negatives(triple: tuple[int, int, int], kg: KnowledgeGraph, k: int, seed=None,
                     corrupt_head: bool = False) -> list[tuple[int, int, int]]:
    """``k`` distinct corruptions of ``triple`` that are not facts of ``kg``.

    Each draw first picks a corruption kind (tail or relation, plus head when
    enabled) uniformly among kinds that still have candidates left.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    h, r, t = triple
    true = kg.triple_set()
    pools = [[(h, r, e) for e in range(kg.n_entities) if e != t and (h, r, e) not in true],
             [(h, q, t) for q in range(kg.n_relations) if q != r and (h, q, t) not in true]]
    if corrupt_head:
        pools.append([(e, r, t) for e in range(kg.n_entities) if e != h and (e, r, t) not in true])
    available = sum(len(p) for p in pools)
    if available < k:
        raise ValueError(f"only {available} filtered negatives exist for {triple}, {k} requested")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for p in pools:
        rng.shuffle(p)
    out = []
    while len(out) < k:
        live = [p for p in pools if p]
        out.append(live[rng.integers(len(live))].pop())
    return out


class BatchNegativeSampler:
    """Vectorised filtered sampler used during training.

    Corruptions are drawn independently (duplicates within one positive are
    allowed) and every corruption that happens to be a true fact is redrawn.
    """

    def __init__(self, kg: KnowledgeGraph, corrupt_head: bool = False, max_rounds: int = 100):
        self.n, self.m = kg.n_entities, kg.n_relations
        self.true_keys = np.unique(self._keys(kg.triple_array()))
        self.corrupt_head = corrupt_head
        self.max_rounds = max_rounds
        self.kg = kg

    def _keys(self, tr: np.ndarray) -> np.ndarray:
        return (tr[..., 0] * self.m + tr[..., 1]) * self.n + tr[..., 2]

    def _is_true(self, tr: np.ndarray) -> np.ndarray:
        keys = self._keys(tr)
        pos = np.searchsorted(self.true_keys, keys)
        pos = np.minimum(pos, len(self.true_keys) - 1)
        return self.true_keys[pos] == keys

    def sample(self, positives: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        neg = np.repeat(positives[:, None, :], k, axis=1)
        todo = np.ones(neg.shape[:2], dtype=bool)
        kinds = 3 if self.corrupt_head else 2
        for _ in range(self.max_rounds):
            idx = np.nonzero(todo)
            count = len(idx[0])
            if count == 0:
                return neg
            fresh = positives[idx[0]].copy()
            kind = rng.integers(kinds, size=count)
            fresh[kind == 0, 2] = rng.integers(self.n, size=int((kind == 0).sum()))
            fresh[kind == 1, 1] = rng.integers(self.m, size=int((kind == 1).sum()))
            fresh[kind == 2, 0] = rng.integers(self.n, size=int((kind == 2).sum()))
            neg[idx] = fresh
            todo[idx] = self._is_true(fresh)
        # Positives whose corruption space is (nearly) exhausted: fall back to the exact sampler.
        for i in np.unique(np.nonzero(todo)[0]):
            exact = sample_negatives(tuple(positives[i]), self.kg, k, rng, self.corrupt_head)
            neg[i] = np.asarray(exact)
        return neg


# ---------------------------------------------------------------- training

@dataclass
class EmbeddingTrainConfig:
    dim: int = 200
    negatives_per_positive: int = 50
    epochs: int = 100
    batch_size: int = 128
    optimizer: str = "adam"
    learning_rate: float = 0.01
    l2_weight: float = 1e-3
    corrupt_head: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.dim < 1 or self.batch_size < 1:
            raise ValueError("dim and batch_size must be positive")


def embedding_loss(params: Sequence[ad.Tensor], positives: np.ndarray, negatives: np.ndarray,
                   l2_weight: float) -> ad.Tensor:
    """Mean logistic loss over positives (label +1) and negatives (label -1).

    The L2 term is the mean squared norm of the embedding rows the batch
    touches, scaled by ``l2_weight``.
    """
    e_re, e_im, r_re, r_im = params
    k = negatives.shape[1]
    allt = np.concatenate([positives, negatives.reshape(-1, 3)], axis=0)
    labels = np.concatenate([np.ones(len(positives)), -np.ones(len(positives) * k)])
    h_re, h_im = ad.take_rows(e_re, allt[:, 0]), ad.take_rows(e_im, allt[:, 0])
    q_re, q_im = ad.take_rows(r_re, allt[:, 1]), ad.take_rows(r_im, allt[:, 1])
    t_re, t_im = ad.take_rows(e_re, allt[:, 2]), ad.take_rows(e_im, allt[:, 2])
    scores = complex_score_tensor(h_re, h_im, q_re, q_im, t_re, t_im)
    loss = ad.mean(ad.softplus(ad.mul(scores, -labels)))
    if l2_weight:
        # Squared norm of every touched row, counted with multiplicity, computed on the tables.
        n_ent, n_rel = e_re.shape[0], r_re.shape[0]
        ent_count = np.bincount(allt[:, 0], minlength=n_ent) + np.bincount(allt[:, 2], minlength=n_ent)
        rel_count = np.bincount(allt[:, 1], minlength=n_rel)
        reg = None
        for table, count in ((e_re, ent_count), (e_im, ent_count), (r_re, rel_count), (r_im, rel_count)):
            part = ad.sum(ad.mul(ad.square(table), count[:, None].astype(np.float64)))
            reg = part if reg is None else ad.add(reg, part)
        loss = ad.add(loss, ad.mul(reg, l2_weight / len(allt)))
    return loss


def train_embeddings(kg: KnowledgeGraph, config: EmbeddingTrainConfig,
                     on_epoch: Callable[[int, float], None] | None = None,
                     init: ComplexEmbeddingTable | None = None) -> ComplexEmbeddingTable:
    """Fit a ComplEx table so true facts score above zero and corruptions below."""
    if not kg.triples:
        raise ValueError("cannot train embeddings on an empty graph")
    if not kg.augmented:
        log.warning("training embeddings on a graph without reverse edges")
    rng = np.random.default_rng(config.seed)
    table = init.copy() if init is not None else ComplexEmbeddingTable.random(
        kg.n_entities, kg.n_relations, config.dim, seed=int(rng.integers(2**31)))
    params = [ad.parameter(a) for a in table.arrays()]
    opt = ad.Optimizer(params, config.optimizer, config.learning_rate)
    sampler = BatchNegativeSampler(kg, config.corrupt_head)
    triples = kg.triple_array()
    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            pos = triples[order[start:start + config.batch_size]]
            neg = sampler.sample(pos, config.negatives_per_positive, rng)
            opt.zero_grad()
            loss = embedding_loss(params, pos, neg, config.l2_weight)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite embedding loss at epoch {epoch}, batch {batches}: {loss.item()}")
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        if on_epoch is not None:
            on_epoch(epoch, total / batches)
        log.debug("kge epoch %d loss %.5f", epoch, total / batches)
    return ComplexEmbeddingTable(*(p.data.copy() for p in params))


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class LinkPredictionReport:
    hits: dict
    mrr: float
    count: int


def link_prediction_eval(table: ComplexEmbeddingTable, kg: KnowledgeGraph,
                         held_out: Iterable[tuple[int, int, int]],
                         ks: Sequence[int] = (1, 3, 10)) -> LinkPredictionReport:
    """Filtered tail ranking for every held-out (h, r, t).

    Other known tails of (h, r) are removed from the candidate list. Ties
    with the true tail count against it.
    """
    held_out = [tuple(int(x) for x in tr) for tr in held_out]
    if not held_out:
        raise ValueError("held-out set is empty")
    table.check_graph(kg)
    known = kg.triple_set()
    overlap = known.intersection(held_out)
    if overlap:
        raise ValueError(f"{len(overlap)} held-out triples are also training triples")
    tails: dict[tuple[int, int], set[int]] = {}
    for h, r, t in list(known) + held_out:
        tails.setdefault((h, r), set()).add(t)
    ent = table.entity_matrix()
    ranks = []
    for h, r, t in held_out:
        hr_re = table.entity_real[h] * table.relation_real[r] - table.entity_imag[h] * table.relation_imag[r]
        hr_im = table.entity_real[h] * table.relation_imag[r] + table.entity_imag[h] * table.relation_real[r]
        scores = ent @ np.concatenate([hr_re, hr_im])
        target = scores[t]
        mask = np.ones(len(scores), dtype=bool)
        mask[list(tails[(h, r)])] = False
        others = scores[mask]
        ranks.append(1 + int(np.sum(others >= target)))
    ranks = np.asarray(ranks)
    return LinkPredictionReport(
        hits={k: float(np.mean(ranks <= k)) for k in ks},
        mrr=float(np.mean(1.0 / ranks)),
        count=len(ranks),
    )
