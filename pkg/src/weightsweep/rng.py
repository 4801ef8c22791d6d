"""Deterministic stream splitting.

Every stochastic operation takes an explicit generator derived from
(master seed, purpose tag, counters), so runs are reproducible and
independent work units can be simulated in any order or in parallel.
"""

from __future__ import annotations

import numpy as np

# Stable numeric tags for the top-level streams of a run.
STREAM_POPULATION = 1
STREAM_REQUEST = 2
STREAM_ENGAGEMENT = 3
STREAM_EXPLORATION = 4
STREAM_TRAIN = 5
STREAM_AB = 6
STREAM_EVAL = 7


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *key).

    Counter-based: the same key always yields the same stream, and
    distinct keys yield statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, key))))
