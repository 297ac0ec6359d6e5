"""Deterministic, splittable random streams.

Every stream is keyed by ``(master seed, replication, role, ...)`` through
:class:`numpy.random.SeedSequence`, so replications can run in any order or
in parallel and still consume identical random numbers.
"""

from __future__ import annotations

import numpy as np

# stream roles
LATENT = 0
MASK = 1
METHOD = 2
BOOTSTRAP = 3
CALIBRATION = 4
ORACLE = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def substreams(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Independent child generators derived from ``rng``'s seed sequence."""
    return [np.random.Generator(np.random.PCG64(s)) for s in rng.bit_generator.seed_seq.spawn(count)]
