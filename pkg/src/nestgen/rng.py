"""Named random streams derived from one user-facing seed.

Each consumer (init, batching, shuffling, sampling, DP noise) gets its own
PCG64 generator keyed by (seed, stream id), so adding draws to one stage never
perturbs another and every run is reproducible from a single integer.
"""

from __future__ import annotations

import numpy as np

INIT, BATCH, SHUFFLE, SAMPLE, DP_NOISE = range(5)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)])))
