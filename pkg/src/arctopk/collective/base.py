from __future__ import annotations

import numpy as np

from ..errors import LengthMismatch
from .ledger import CommLedger


def ordered_mean(vectors):
    """Elementwise mean, accumulated in ascending rank order.

    Every transport must reproduce exactly this sequence of floating-point
    operations so reductions agree bit-for-bit.
    """
    acc = np.array(vectors[0], dtype=np.float64, copy=True)
    for v in vectors[1:]:
        acc += v
    return acc / len(vectors)


def check_lengths(sizes, what="all_reduce"):
    if len(set(sizes)) > 1:
        raise LengthMismatch(f"{what}: ranks supplied different lengths {list(sizes)}")


class Communicator:
    """One rank's view of a group of ``world_size`` SPMD nodes.

    Subclasses implement the raw exchanges; accounting lives here so both
    transports charge identically. Calls block and must be issued in the
    same order on every rank.
    """

    def __init__(self, rank: int, world_size: int, ledger: CommLedger | None = None):
        if world_size < 1 or not 0 <= rank < world_size:
            raise ValueError(f"invalid rank {rank} for world size {world_size}")
        self.rank = rank
        self.world_size = world_size
        self.ledger = ledger if ledger is not None else CommLedger()

    def all_reduce_avg(self, local) -> np.ndarray:
        arr = np.asarray(local, dtype=np.float64)
        vec = np.ascontiguousarray(arr).reshape(-1)
        if self.world_size == 1:
            return vec.copy().reshape(arr.shape)
        out = self._reduce_mean(vec)
        self.ledger.charge("all_reduce", 2 * vec.size)
        return out.reshape(arr.shape)

    def all_gather(self, values, indices=None) -> list:
        """Gather every rank's ``(values, indices)`` pair, in rank order.

        Payload lengths may differ between ranks. Each value and each index
        counts as one entry; a node is charged for sending its payload to
        the ``N - 1`` other nodes.
        """
        vals = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
        idx = None if indices is None else np.asarray(indices, dtype=np.int64).reshape(-1)
        if self.world_size == 1:
            return [(vals.copy(), None if idx is None else idx.copy())]
        out = self._gather(vals, idx)
        entries = vals.size + (0 if idx is None else idx.size)
        self.ledger.charge("all_gather", (self.world_size - 1) * entries)
        return out

    def broadcast_seed(self, seed: int | None, root: int = 0) -> int:
        """Distribute root's 64-bit seed; charged zero entries by convention."""
        if not 0 <= root < self.world_size:
            raise ValueError(f"root {root} outside group of {self.world_size}")
        if self.world_size == 1:
            return int(seed)
        out = self._broadcast(None if seed is None else int(seed), root)
        self.ledger.charge("broadcast", 0)
        return out

    def barrier(self) -> None:
        if self.world_size > 1:
            self.broadcast_seed(0 if self.rank == 0 else None, root=0)

    def close(self) -> None:
        pass

    def _reduce_mean(self, vec):
        raise NotImplementedError

    def _gather(self, values, indices):
        raise NotImplementedError

    def _broadcast(self, seed, root):
        raise NotImplementedError


class SoloCommunicator(Communicator):
    """A group of one; every collective is the identity."""

    def __init__(self, ledger: CommLedger | None = None):
        super().__init__(0, 1, ledger)
