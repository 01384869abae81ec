"""
Seed derivation.

All randomness goes through numpy's PCG64 bit generator seeded from a
SeedSequence whose spawn key is the caller's index path, e.g.
(sigma2_index, trial) for a sweep trial or (restart,) for a BCD restart.
Streams therefore depend only on (seed, index path), never on execution
order. Requires numpy >= 1.22, whose SeedSequence/PCG64 output is stable.
"""
from typing import Tuple

import numpy as np


def derive_seed_sequence(seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, *path)))


def derive_int_seed(seed: int, *path: int) -> int:
    """A 63-bit integer seed for APIs that take plain ints."""
    words: Tuple[int, int] = tuple(derive_seed_sequence(seed, *path).generate_state(2, dtype=np.uint32))
    return (int(words[0]) << 31) ^ int(words[1])
