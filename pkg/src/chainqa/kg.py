"""Knowledge graph storage, reverse-edge augmentation, pruning and chain search."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

REVERSE_SUFFIX = "_reverse"

# Ordered relation ids from a source entity to a target entity.
RelationalChain = tuple


class TripleParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownEntityError(KeyError):
    pass


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable directed multigraph over dense entity and relation ids.

    ``reverse_of`` is empty until :func:`augment_reverse` has been applied;
    afterwards it maps every relation id to its inverse counterpart.
    """

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    triples: tuple[tuple[int, int, int], ...]
    is_reverse: tuple[bool, ...]
    reverse_of: tuple[int, ...] = ()
    out_index: tuple[tuple[tuple[int, int], ...], ...] = field(default=(), repr=False)
    in_index: tuple[tuple[tuple[int, int], ...], ...] = field(default=(), repr=False)
    _entity_ids: dict = field(default_factory=dict, repr=False, compare=False)
    _relation_ids: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, entities: Iterable[str], relations: Iterable[str],
              triples: Iterable[tuple[int, int, int]], is_reverse: Iterable[bool] | None = None,
              reverse_of: Iterable[int] = ()) -> "KnowledgeGraph":
        entities = tuple(entities)
        relations = tuple(relations)
        is_reverse = tuple(is_reverse) if is_reverse is not None else (False,) * len(relations)
        seen: set[tuple[int, int, int]] = set()
        unique: list[tuple[int, int, int]] = []
        n, m = len(entities), len(relations)
        for h, r, t in triples:
            tr = (int(h), int(r), int(t))
            if not (0 <= tr[0] < n and 0 <= tr[2] < n and 0 <= tr[1] < m):
                raise ValueError(f"triple {tr} references ids outside {n} entities / {m} relations")
            if tr not in seen:
                seen.add(tr)
                unique.append(tr)
        out: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        inn: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for h, r, t in unique:
            out[h].append((r, t))
            inn[t].append((r, h))
        entity_ids = {label: i for i, label in enumerate(entities)}
        if len(entity_ids) != n:
            raise ValueError("entity labels must be unique")
        return cls(
            entities=entities,
            relations=relations,
            triples=tuple(unique),
            is_reverse=is_reverse,
            reverse_of=tuple(reverse_of),
            out_index=tuple(tuple(x) for x in out),
            in_index=tuple(tuple(x) for x in inn),
            _entity_ids=entity_ids,
            _relation_ids={label: i for i, label in enumerate(relations)},
        )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def augmented(self) -> bool:
        return bool(self.reverse_of)

    def entity_id(self, label: str) -> int:
        try:
            return self._entity_ids[label]
        except KeyError:
            raise UnknownEntityError(label) from None

    def relation_id(self, label: str) -> int:
        return self._relation_ids[label]

    def has_entity(self, label: str) -> bool:
        return label in self._entity_ids

    def reverse(self, r: int) -> int:
        if not self.reverse_of:
            raise ValueError("graph has no reverse relations; call augment_reverse first")
        return self.reverse_of[r]

    def triple_array(self) -> np.ndarray:
        if not self.triples:
            return np.zeros((0, 3), dtype=np.int64)
        return np.asarray(self.triples, dtype=np.int64)

    def triple_set(self) -> set[tuple[int, int, int]]:
        return set(self.triples)

    def forward_triples(self) -> list[tuple[int, int, int]]:
        return [t for t in self.triples if not self.is_reverse[t[1]]]


def load_triples(path: str | Path, delimiter: str = "|") -> KnowledgeGraph:
    """Read a delimited triple file; ids follow first appearance (head before tail)."""
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) != 3:
                raise TripleParseError(f"expected 3 fields separated by {delimiter!r}, got {len(parts)}", lineno)
            h, r, t = (p.strip() for p in parts)
            if not h or not r or not t:
                raise TripleParseError("empty field", lineno)
            hid = entities.setdefault(h, len(entities))
            rid = relations.setdefault(r, len(relations))
            tid = entities.setdefault(t, len(entities))
            triples.append((hid, rid, tid))
    if not triples:
        raise TripleParseError(f"no triples in {path}")
    return KnowledgeGraph.build(entities, relations, triples)


def write_triples(kg: KnowledgeGraph, path: str | Path, delimiter: str = "|") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.forward_triples():
            fh.write(f"{kg.entities[h]}{delimiter}{kg.relations[r]}{delimiter}{kg.entities[t]}\n")


def augment_reverse(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Add an inverse edge for every fact.

    A loaded relation already named ``<label>_reverse`` becomes the inverse
    of ``<label>`` instead of getting a new id, so text-identical triples
    collapse into one.
    """
    if kg.augmented or any(kg.is_reverse):
        raise ValueError("graph is already reverse-augmented")
    relations = list(kg.relations)
    is_reverse = [False] * len(relations)
    reverse_of = [-1] * len(relations)
    for r, label in enumerate(kg.relations):
        if reverse_of[r] != -1:
            continue
        partner = kg._relation_ids.get(label + REVERSE_SUFFIX)
        if partner is not None and reverse_of[partner] == -1 and partner != r:
            reverse_of[r], reverse_of[partner] = partner, r
            is_reverse[partner] = True
    for r, label in enumerate(kg.relations):
        if reverse_of[r] == -1:
            new = len(relations)
            relations.append(label + REVERSE_SUFFIX)
            is_reverse.append(True)
            reverse_of[r] = new
            reverse_of.append(r)
    triples = list(kg.triples)
    triples.extend((t, reverse_of[r], h) for h, r, t in kg.triples)
    return KnowledgeGraph.build(kg.entities, relations, triples, is_reverse, reverse_of)


def prune_half(kg: KnowledgeGraph, keep_probability: float = 0.5, seed: int = 0) -> KnowledgeGraph:
    """Keep each fact independently with ``keep_probability``.

    Works on the un-augmented graph so that dropping a fact drops both of its
    directions once :func:`augment_reverse` is re-run. Entity and relation ids
    are preserved.
    """
    if not 0.0 <= keep_probability <= 1.0:
        raise ValueError(f"keep_probability must be in [0, 1], got {keep_probability}")
    if kg.augmented:
        raise ValueError("prune_half expects a graph without reverse edges")
    draws = np.random.default_rng(seed).random(len(kg.triples))
    kept = [t for t, u in zip(kg.triples, draws) if u < keep_probability]
    return KnowledgeGraph.build(kg.entities, kg.relations, kept, kg.is_reverse)


def neighbors(kg: KnowledgeGraph, e: int) -> list[tuple[int, int]]:
    if not 0 <= e < kg.n_entities:
        raise UnknownEntityError(e)
    return list(kg.out_index[e])


def chains_from(kg: KnowledgeGraph, source: int, max_len: int = 4) -> dict[int, RelationalChain]:
    """Shortest chain from ``source`` to every entity reachable within ``max_len`` hops.

    Among equally short chains the lexicographically smallest relation-id
    sequence wins. This is exact layer by layer: every shortest path to a
    node at depth k passes through a node at depth k-1.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if not 0 <= source < kg.n_entities:
        raise UnknownEntityError(source)
    best: dict[int, RelationalChain] = {source: ()}
    frontier = [source]
    for _ in range(max_len):
        layer: dict[int, RelationalChain] = {}
        for u in frontier:
            prefix = best[u]
            for r, v in kg.out_index[u]:
                if v in best:
                    continue
                cand = prefix + (r,)
                cur = layer.get(v)
                if cur is None or cand < cur:
                    layer[v] = cand
        if not layer:
            break
        best.update(layer)
        frontier = sorted(layer)
    return best


def shortest_relational_chain(kg: KnowledgeGraph, source: int, target: int,
                              max_len: int = 4) -> Optional[RelationalChain]:
    """Shortest relation sequence source -> target, or ``None`` when unreachable."""
    if not 0 <= target < kg.n_entities:
        raise UnknownEntityError(target)
    return chains_from(kg, source, max_len).get(target)
