"""Deterministic random streams.

Every run draws from its own generator derived from ``(seed, stream, *index)``
with numpy's ``SeedSequence`` spawn keys, so results never depend on the order
in which runs execute or how they are spread across workers.
"""
from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "philox4x64-10/seedsequence-spawn-key"

# stream tags; the first element of every spawn key
DATA = 0
NOISE = 1
AUDIT = 2
RADEMACHER = 3
REPLAY = 4


def stream(seed: int, tag: int, *index: int) -> np.random.Generator:
    """Return the generator for ``(seed, tag, *index)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))
