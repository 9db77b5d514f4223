"""Deterministic random-stream derivation.

Every stochastic component draws from a substream identified by a user seed
plus a structural path (replication index, resample index, restart index).
Substreams are independent of execution order and worker count, which is
what makes parallel runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the substream identified by ``(seed, *path)``."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64, spawn_key=tuple(int(p) for p in path)
    )
    return np.random.default_rng(ss)


def derive_seed(seed: int, *path: int) -> int:
    """Return a stable 63-bit integer seed derived from ``(seed, *path)``."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64, spawn_key=tuple(int(p) for p in path)
    )
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
