"""Seed derivation shared by every stochastic routine."""

from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 64-bit seed derived from ``seed`` and an integer path.

    Two calls with the same arguments always agree, and distinct key paths
    give statistically independent streams (``SeedSequence`` spawning).
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and keys must be non-negative integers")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    if keys:
        return np.random.default_rng(derive_seed(seed, *keys))
    return np.random.default_rng(int(seed))
