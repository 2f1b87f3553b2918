"""Counter-based random streams.

Every stochastic routine takes a ``numpy.random.Generator`` explicitly.
Substreams are Philox generators keyed by the master seed, with the
substream index placed in the top word of the 256-bit counter, so stream
``i`` never overlaps stream ``j`` and can be regenerated in isolation.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV_VAR = "SCREENLAB_SEED"
DEFAULT_SEED = 20190101
_MASK64 = (1 << 64) - 1


def default_seed() -> int:
    value = os.environ.get(SEED_ENV_VAR)
    return int(value) if value else DEFAULT_SEED


def make_stream(seed: int) -> np.random.Generator:
    return substream(seed, 0)


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator number ``index`` derived from ``seed``."""
    if index < 0:
        raise ValueError("substream index must be nonnegative")
    counter = np.array([0, 0, 0, index & _MASK64], dtype=np.uint64)
    bitgen = np.random.Philox(key=seed & ((1 << 128) - 1), counter=counter)
    return np.random.Generator(bitgen)
