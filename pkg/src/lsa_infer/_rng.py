"""Seeded random streams.

Every random stream in the package is keyed by a base seed plus a tuple of
integer indices (grid point, replication, replicate, ...).  The keys go into
``SeedSequence.spawn_key`` so that a stream depends only on its own key and
never on how work was split across workers.
"""

from __future__ import annotations

import numpy as np

# Domain tags keep streams of different roles apart for the same indices.
OBS = 0
WEIGHTS = 1
REAL = 2
DIRECTIONS = 3
REFERENCE = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
