"""Deterministic seed splitting: every module draws from its own named child stream."""
import zlib

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def derive(seed, name: str) -> np.random.SeedSequence:
    """Child seed keyed by ``name`` (stable across runs and platforms)."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (zlib.crc32(name.encode()),))


def rng(seed, name: str | None = None) -> np.random.Generator:
    return np.random.default_rng(derive(seed, name) if name else as_seed_sequence(seed))
