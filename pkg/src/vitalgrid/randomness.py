"""Seed-stream derivation.

All randomness in the package flows from one 64-bit root seed through
numpy's PCG64 via SeedSequence spawn keys: ``substream(root_seed, domain,
index)`` is the documented derivation ``seed_i = SeedSequence(root_seed,
spawn_key=(domain, index))``. Streams are therefore reproducible across
platforms and independent of worker scheduling.
"""
from __future__ import annotations

import numpy as np

# Domain tags keep independent uses of the same (seed, index) apart.
DOMAIN_TREE = 1
DOMAIN_ADMISSION = 2
DOMAIN_SUBSAMPLE = 3
DOMAIN_SPLIT = 4
DOMAIN_SYNTH_MASTER = 5
DOMAIN_IMPUTER = 6


def substream(root_seed: int, *key: int) -> np.random.Generator:
    """Derive an independent PCG64 generator from the root seed and a key path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(root_seed, spawn_key=tuple(key))))


def child_seed(root_seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from the root seed and a key path."""
    state = np.random.SeedSequence(root_seed, spawn_key=tuple(key)).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))
