"""Keyed random streams.

Every random draw in the simulator comes from a Philox generator whose key is
derived from the master seed plus a tuple of integers naming the consumer
(purpose tag, layer, ensemble, tile, ...). Draw order inside a stream is
fixed by the consumer, so results never depend on scheduling.
"""
from __future__ import annotations

import numpy as np

# purpose tags
SAMPLE = 1
PROGRAM = 2
READ = 3
GENERATE = 4
TASK = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
