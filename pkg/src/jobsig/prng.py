"""Counter-based random streams.

Everything stochastic (dataset synthesis, weight init, shuffling, dropout,
splits) draws from numpy's Philox generator keyed by (seed, domain, index),
so results are reproducible bit-for-bit across platforms.  Philox-4x64-10 is
fully specified by its published round constants; any implementation yields
the same streams for the same keys.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 56

DOMAIN_MODEL_INIT = 1
DOMAIN_SHUFFLE = 2
DOMAIN_DROPOUT = 3
DOMAIN_GRADCHECK = 4
DOMAIN_SYNTH_JOB = 5
DOMAIN_SPLIT = 6
DOMAIN_KFOLD = 7
DOMAIN_NODE_JITTER = 8


def stream_rng(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, domain, index)."""
    key = [seed & _MASK64, ((domain & 0xFF) << _INDEX_BITS) | (index & ((1 << _INDEX_BITS) - 1))]
    return np.random.Generator(np.random.Philox(key=key))
