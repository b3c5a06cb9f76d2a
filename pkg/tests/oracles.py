"""Independent brute-force oracles used by several test modules."""
from itertools import product

import numpy as np

from chainqa.kg import KnowledgeGraph


def brute_force_chains(kg: KnowledgeGraph, source: int, max_len: int) -> dict[int, tuple]:
    """Enumerate every walk of length <= max_len; keep the shortest, then lexicographically smallest."""
    best = {source: ()}
    walks = [(source, ())]
    for _ in range(max_len):
        nxt = []
        for node, rels in walks:
            for h, r, t in kg.triples:
                if h == node:
                    nxt.append((t, rels + (r,)))
        for node, rels in nxt:
            cur = best.get(node)
            if cur is None or (len(rels) == len(cur) and rels < cur):
                best[node] = rels
        walks = nxt
    return best


def random_graph(rng: np.random.Generator, max_nodes: int = 12, max_edges: int = 40,
                 n_relations: int = 3) -> KnowledgeGraph:
    n = int(rng.integers(2, max_nodes + 1))
    e = int(rng.integers(0, max_edges + 1))
    triples = [(int(rng.integers(n)), int(rng.integers(n_relations)), int(rng.integers(n))) for _ in range(e)]
    return KnowledgeGraph.build([f"e{i}" for i in range(n)], [f"r{i}" for i in range(n_relations)], triples)


def complex_oracle(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> float:
    """Re(sum h * r * conj(t)) with Python complex arithmetic, one term at a time."""
    total = 0j
    for a, b, c in zip(h, r, t):
        total += complex(a) * complex(b) * complex(c).conjugate()
    return total.real


def all_pairs(n: int):
    return product(range(n), range(n))
