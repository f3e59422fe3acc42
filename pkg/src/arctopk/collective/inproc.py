"""In-process transport: every rank lives in this process.

Two interchangeable schedulers share one exchange protocol (each rank posts
its payload, then reads every rank's payload in rank order):

``sequential``
    ranks are greenlets driven in rank order by a scheduler; a collective
    call switches back to the scheduler until every rank has posted.
``threads``
    one OS thread per rank, synchronised by a barrier.

Results, ledgers and record streams do not depend on the choice.
"""
from __future__ import annotations

import threading

import greenlet

from ..errors import TransportFailure
from .base import Communicator, SoloCommunicator, check_lengths, ordered_mean

DEFAULT_TIMEOUT = 120.0
SCHEDULERS = ("sequential", "threads")


class InProcessGroup:
    """Shared exchange slots for ``world_size`` threaded ranks."""

    def __init__(self, world_size: int, timeout: float = DEFAULT_TIMEOUT):
        if world_size < 1:
            raise ValueError("world_size must be positive")
        self.world_size = world_size
        self._barrier = threading.Barrier(world_size, timeout=timeout)
        # two slot banks, alternated per collective, so a fast rank can
        # deposit its next payload while slower ranks still read this one
        self._slots = [[None] * world_size, [None] * world_size]

    def communicators(self) -> list:
        if self.world_size == 1:
            return [SoloCommunicator()]
        return [InProcessCommunicator(self, r) for r in range(self.world_size)]

    def exchange(self, comm, payload) -> list:
        bank = self._slots[comm._bank]
        comm._bank ^= 1
        bank[comm.rank] = payload
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError as exc:
            raise TransportFailure(f"rank {comm.rank}: group aborted") from exc
        return list(bank)

    def abort(self) -> None:
        self._barrier.abort()


class _SequentialGroup:
    world_size: int

    def __init__(self, world_size: int):
        self.world_size = world_size
        self.hub = None

    def exchange(self, comm, payload) -> list:
        return self.hub.switch(("post", payload))


class InProcessCommunicator(Communicator):
    def __init__(self, group, rank: int):
        super().__init__(rank, group.world_size)
        self._group = group
        self._bank = 0

    def _reduce_mean(self, vec):
        parts = self._group.exchange(self, vec.copy())
        check_lengths([p.size for p in parts])
        return ordered_mean(parts)

    def _gather(self, values, indices):
        payload = (values.copy(), None if indices is None else indices.copy())
        parts = self._group.exchange(self, payload)
        return [(v.copy(), None if i is None else i.copy()) for v, i in parts]

    def _broadcast(self, seed, root):
        parts = self._group.exchange(self, seed)
        return int(parts[root])


def _run_threads(world_size, fn, args, kwargs, timeout):
    group = InProcessGroup(world_size, timeout=timeout)
    comms = group.communicators()
    results = [None] * world_size
    errors = [None] * world_size

    def target(rank):
        try:
            results[rank] = fn(comms[rank], *args, **kwargs)
        except BaseException as exc:  # noqa: BLE001 - re-raised by caller
            errors[rank] = exc
            group.abort()

    threads = [threading.Thread(target=target, args=(r,), daemon=True) for r in range(world_size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results, errors


def _run_sequential(world_size, fn, args, kwargs):
    group = _SequentialGroup(world_size)
    group.hub = greenlet.getcurrent()
    comms = [InProcessCommunicator(group, r) for r in range(world_size)]
    results = [None] * world_size
    errors = [None] * world_size

    def body(comm):
        return ("done", fn(comm, *args, **kwargs))

    glets = [greenlet.greenlet(body) for _ in range(world_size)]
    inbox = [comm for comm in comms]  # first switch starts body(comm)

    def kill_all():
        for g in glets:
            if not g.dead:
                try:
                    g.throw(TransportFailure("group aborted"))
                except TransportFailure:
                    pass

    while True:
        messages = []
        for r, g in enumerate(glets):
            try:
                messages.append(g.switch(inbox[r]))
            except BaseException as exc:  # noqa: BLE001 - re-raised by caller
                errors[r] = exc
                kill_all()
                return results, errors
        kinds = {kind for kind, _ in messages}
        if kinds == {"done"}:
            for r, (_, value) in enumerate(messages):
                results[r] = value
            return results, errors
        if kinds != {"post"}:
            kill_all()
            errors[0] = TransportFailure("ranks disagree on the sequence of collectives")
            return results, errors
        parts = [payload for _, payload in messages]
        inbox = [parts] * world_size


def run_spmd(world_size: int, fn, *args, scheduler: str = "sequential",
             timeout: float = DEFAULT_TIMEOUT, **kwargs) -> list:
    """Run ``fn(comm, *args, **kwargs)`` on every rank; return results by rank.

    A failure on any rank aborts the group; the first non-transport error
    (lowest rank) is re-raised, otherwise the first transport error.
    """
    if world_size < 1:
        raise ValueError("world_size must be positive")
    if scheduler not in SCHEDULERS:
        raise ValueError(f"unknown scheduler {scheduler!r}; choose from {SCHEDULERS}")
    if world_size == 1:
        return [fn(SoloCommunicator(), *args, **kwargs)]
    if scheduler == "threads":
        results, errors = _run_threads(world_size, fn, args, kwargs, timeout)
    else:
        results, errors = _run_sequential(world_size, fn, args, kwargs)

    failed = [e for e in errors if e is not None]
    if failed:
        primary = [e for e in failed if not isinstance(e, TransportFailure)]
        raise (primary or failed)[0]
    return results
