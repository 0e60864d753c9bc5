"""Counter-based random substreams.

Every random decision in the library draws from a generator keyed by
``(root_seed, purpose, epoch, worker, index)``.  The key is fed to
:class:`numpy.random.SeedSequence` as ``entropy=root_seed`` and
``spawn_key=(purpose, epoch, worker, index)``, so two substreams are
independent whenever any component of the key differs and no generator state
is ever shared between call sites.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    BLOCK_ORDER = 1
    TUPLE_SHUFFLE = 2
    EPOCH_SHUFFLE = 3
    FULL_SHUFFLE = 4
    WINDOW = 5
    RESERVOIR = 6
    LOOP_BUFFER = 7
    SYNTHETIC = 8
    INIT = 9
    BENCH = 10
    VERIFY = 11


def substream(seed: int, purpose: Purpose, epoch: int = 0, worker: int = 0, index: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(epoch), int(worker), int(index)))
    return np.random.Generator(np.random.PCG64(ss))
