"""Per-purpose random streams derived from one run seed.

Every stream is a PCG64 generator seeded with ``SeedSequence([seed, purpose])``,
so the split, weight init, epoch shuffles, dropout masks and permutation
repeats are independent of each other and reproducible across platforms.
"""
import numpy as np

SPLIT = 1
INIT = 2
SHUFFLE = 3
DROPOUT = 4
PERMUTATION = 5


def rng_for(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, purpose, *extra])))
