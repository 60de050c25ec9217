"""Deterministic, splittable RNG streams.

Every stochastic operation derives its generator from (seed, stream path),
so results are reproducible and independent of evaluation order.
"""
from __future__ import annotations

import numpy as np

# Stream identifiers; keep values stable, they are part of reproducibility.
STREAM_IFOREST = 1
STREAM_KMEANS = 2
STREAM_SELECT_K = 3
STREAM_CLUSTER_ORDER = 4
STREAM_DATAGEN = 5
STREAM_MUTATE = 6
STREAM_EXPERIMENT = 7


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """A generator for the stream identified by (seed, *path)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(path))))


def child_seed(seed: int, *path: int) -> int:
    """A derived 64-bit seed, for handing to code that takes a plain seed."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
