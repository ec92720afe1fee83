"""Counter-based random streams.

Every stream is keyed by (master seed, *indices), e.g. (seed, realization,
sub-stream) or (seed, sub-stream, particle), so the numbers a given consumer
sees never depend on how work is scheduled.
"""
import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is required; wall-clock seeding is not allowed")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
