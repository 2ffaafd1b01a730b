"""Seed stream splitting.

Every random draw in a run derives from the single experiment seed through
``numpy.random.SeedSequence`` spawn keys, so a draw can be reproduced without
replaying the draws that preceded it:

    (DELAYS, t)   completion times of all k workers in iteration t
    (INIT,)       starting point x0
    (DATA,)       synthetic problem generation
    (SUBSETS,)    random non-straggler sets in Monte-Carlo checks

Within iteration t the k delays are drawn as one vector and worker j takes
entry j, which is what the network worker does too.
"""

import numpy as np

DELAYS = 0
INIT = 1
DATA = 2
SUBSETS = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, key)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
