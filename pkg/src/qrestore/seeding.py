"""Reproducible random streams.

Every stream is a Philox (counter-based) generator keyed by a master seed and
a spawn key, so trial ``k`` of a run gets the same numbers no matter which
worker executes it or in what order.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for ``(seed, *key)``; distinct keys give independent streams."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    """Accept a generator, an integer seed, or None (fresh OS entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.Generator(np.random.Philox())
    return stream(int(rng))
