"""Shared training helpers: length-bucketed batching and parameter snapshots."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad


def length_batches(lengths: Sequence[int], batch_size: int,
                   rng: np.random.Generator | None = None) -> Iterator[np.ndarray]:
    """Yield index arrays whose members share one sequence length.

    Recurrent encoders then run without padding. With ``rng`` both the
    bucket contents and the batch order are shuffled.
    """
    lengths = np.asarray(lengths)
    batches = []
    for length in np.unique(lengths):
        idx = np.nonzero(lengths == length)[0]
        if rng is not None:
            idx = rng.permutation(idx)
        batches.extend(idx[i:i + batch_size] for i in range(0, len(idx), batch_size))
    order = rng.permutation(len(batches)) if rng is not None else range(len(batches))
    for b in order:
        yield batches[b]


def snapshot(params: dict[str, ad.Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def restore(params: dict[str, ad.Tensor], saved: dict[str, np.ndarray]) -> None:
    for k, v in params.items():
        v.data[...] = saved[k]
