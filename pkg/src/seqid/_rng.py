"""Seeded generators shared by the simulation and the test statistic."""

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox stream for ``seed``; ``keys`` select independent sub-streams."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit integer seed for the sub-stream ``keys`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint32) @ np.array([1 << 31, 1], dtype=object)) & ((1 << 63) - 1)
