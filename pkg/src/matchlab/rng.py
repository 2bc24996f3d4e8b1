"""Counter-based random streams keyed by (seed, trial, ...).

Every trial draws from its own Philox stream, so a record depends only on the
key and never on how trials were scheduled across workers.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for the key ``(seed, *key)``."""
    words = [int(seed)] + [int(k) for k in key]
    if any(w < 0 for w in words):
        raise ValueError(f"rng key words must be nonnegative, got {words}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(int(rng))
