"""Deterministic random streams.

Every stream in the simulator is derived from an integer seed plus a tuple
key via numpy's SeedSequence, backed by the counter-based Philox generator.
Streams are therefore independent of scheduling: the same (seed, key) always
yields bit-identical draws no matter which other streams were consumed first.
"""

from __future__ import annotations

import numpy as np

# Key prefixes; keys are (prefix, *indices).
BASIS_DIRECTIONS = 0
BASIS_ORIGIN = 1
STATE_INIT = 2
COHORT = 3
CLIENT = 4
EVAL = 5
BOUND = 6
DATA = 7
LABELSET = 8


def stream(seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
