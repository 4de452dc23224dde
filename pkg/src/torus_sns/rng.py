"""Reproducible random streams.

Splitting rule: replica ``r`` of logical stream ``s`` under master seed ``seed``
draws from ``PCG64(SeedSequence(seed, spawn_key=(s, r)))``.  A replica's
numbers therefore depend only on ``(seed, s, r)``: never on the ensemble size,
the chunking, or the number of workers.
"""

from __future__ import annotations

import numpy as np

# logical stream ids
STREAM_NOISE = 0
STREAM_FIELDS = 1
STREAM_TRIALS = 2


def replica_generator(seed: int, replica: int, stream: int = STREAM_NOISE) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(replica)))
    return np.random.Generator(np.random.PCG64(ss))


def generator(seed: int, stream: int = STREAM_FIELDS) -> np.random.Generator:
    """Single stream for non-replicated draws (test fields, trial parameters)."""
    return replica_generator(seed, 0, stream)


class ReplicaStreams:
    """Per-replica generators that hand out standard normals in blocks.

    ``next(shape)`` returns an array ``(n_replicas, *shape)``.  Draws are
    buffered ``block`` steps at a time; since a generator fills arrays
    sequentially, the values are identical to drawing one step at a time.
    """

    def __init__(self, seed: int, replicas, stream: int = STREAM_NOISE, block: int = 8):
        self.replicas = np.asarray(list(replicas), dtype=np.int64)
        self.gens = [replica_generator(seed, r, stream) for r in self.replicas]
        self.block = int(block)
        self._buf = None
        self._pos = 0
        self._shape = None

    def __len__(self) -> int:
        return len(self.gens)

    def next(self, shape: tuple) -> np.ndarray:
        shape = tuple(shape)
        if self._shape is not None and shape != self._shape:
            raise ValueError("ReplicaStreams draws must keep a fixed shape")
        self._shape = shape
        if self._buf is None or self._pos == self.block:
            self._buf = np.stack([g.standard_normal((self.block,) + shape) for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out
