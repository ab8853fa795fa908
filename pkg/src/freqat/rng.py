"""Seeded random streams.

All randomness comes from numpy's PCG64 generator. Each concern draws from
its own stream, keyed by ``(seed, stream id)`` through ``SeedSequence``, so
that e.g. switching the training attack on or off never shifts the data
shuffling or the weight initialization.
"""

import numpy as np

INIT = 0
DATA = 1
ATTACK = 2
AUGMENT = 3
SYNTH_HOLDOUT = 4


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, which])))
