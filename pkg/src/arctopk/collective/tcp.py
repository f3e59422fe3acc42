"""TCP ring transport: one OS process per rank over loopback.

Rendezvous: rank 0 listens on the published address. Every other rank opens
its own listener on an ephemeral port, connects to rank 0 and announces
``(rank, port)``; rank 0 replies with the full port table. Each rank then
connects to its right neighbour ``(rank + 1) % N`` and accepts one
connection from its left neighbour, forming a ring.

All-reduce is a rank-ordered chain (0 -> 1 -> ... -> N-1) that accumulates
exactly like :func:`ordered_mean`, followed by a ring pass of the result,
so in-process and TCP runs agree bit-for-bit.
"""
from __future__ import annotations

import socket

import numpy as np

from ..errors import LengthMismatch, TransportFailure
from .base import Communicator
from .wire import DATA, HELLO, INDEXED, SEED, TABLE, WireMessage, recv_message, send_message

DEFAULT_TIMEOUT = 60.0


def parse_address(addr: str) -> tuple:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


def make_listener(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(64)
    return sock


def _connect(host, port, timeout):
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportFailure(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    sock.settimeout(timeout)
    return sock


def _accept(listener, timeout):
    listener.settimeout(timeout)
    try:
        sock, _ = listener.accept()
    except OSError as exc:
        raise TransportFailure(f"accept failed: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    sock.settimeout(timeout)
    return sock


def _hello(rank, port=0):
    return WireMessage(HELLO, np.zeros(0), [rank, port])


class TcpCommunicator(Communicator):
    def __init__(self, rank, world_size, left, right, listener=None):
        super().__init__(rank, world_size)
        self._left = left
        self._right = right
        self._listener = listener

    @classmethod
    def connect(cls, rank: int, world_size: int, address: str,
                listener: socket.socket | None = None,
                timeout: float = DEFAULT_TIMEOUT) -> "TcpCommunicator":
        """Join the group. Rank 0 may pass an already-bound ``listener``."""
        host, port = parse_address(address)
        if world_size == 1:
            return cls(rank, 1, None, None, listener)

        if rank == 0:
            own = listener if listener is not None else make_listener(host, port)
            ports = [own.getsockname()[1]] + [0] * (world_size - 1)
            pending = []
            for _ in range(world_size - 1):
                conn = _accept(own, timeout)
                msg = recv_message(conn)
                peer, peer_port = (int(v) for v in msg.indices)
                if msg.kind != HELLO or not 0 < peer < world_size or ports[peer]:
                    raise TransportFailure(f"bad rendezvous hello from rank {peer}")
                ports[peer] = peer_port
                pending.append(conn)
            table = WireMessage(TABLE, np.zeros(0), ports)
            for conn in pending:
                send_message(conn, table)
                conn.close()
        else:
            own = make_listener(host, 0)
            conn = _connect(host, port, timeout)
            send_message(conn, _hello(rank, own.getsockname()[1]))
            msg = recv_message(conn)
            conn.close()
            if msg.kind != TABLE or msg.indices.size != world_size:
                raise TransportFailure("bad rendezvous table")
            ports = [int(p) for p in msg.indices]

        right_rank = (rank + 1) % world_size
        right = _connect(host, ports[right_rank], timeout)
        send_message(right, _hello(rank))
        left = _accept(own, timeout)
        msg = recv_message(left)
        if msg.kind != HELLO or int(msg.indices[0]) != (rank - 1) % world_size:
            raise TransportFailure("ring neighbour mismatch")
        return cls(rank, world_size, left, right, own)

    def close(self) -> None:
        for sock in (self._left, self._right, self._listener):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass
        self._left = self._right = self._listener = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, msg):
        send_message(self._right, msg)

    def _recv(self):
        return recv_message(self._left)

    def _recv_data(self, size):
        msg = self._recv()
        if msg.kind != DATA:
            raise TransportFailure(f"expected DATA frame, got kind {msg.kind}")
        if msg.values.size != size:
            self.close()
            raise LengthMismatch(f"rank {self.rank}: expected {size} entries, got {msg.values.size}")
        return msg.values

    def _reduce_mean(self, vec):
        N, r = self.world_size, self.rank
        if r == 0:
            self._send(WireMessage(DATA, vec))
        else:
            acc = self._recv_data(vec.size)
            acc += vec
            if r < N - 1:
                self._send(WireMessage(DATA, acc))
            else:
                final = acc / N
                self._send(WireMessage(DATA, final))
                return final
        final = self._recv_data(vec.size)
        if (r + 1) % N != N - 1:
            self._send(WireMessage(DATA, final))
        return final

    def _gather(self, values, indices):
        N, r = self.world_size, self.rank
        out = [None] * N
        out[r] = (values.copy(), None if indices is None else indices.copy())
        buf = WireMessage(DATA, values) if indices is None else WireMessage(INDEXED, values, indices)
        for step in range(N - 1):
            # rank 0 sends first, the rest receive first: no cyclic wait
            if r == 0:
                self._send(buf)
                got = self._recv()
            else:
                got = self._recv()
                self._send(buf)
            if got.kind not in (DATA, INDEXED):
                raise TransportFailure(f"unexpected frame kind {got.kind} in all_gather")
            src = (r - step - 1) % N
            out[src] = (got.values.copy(),
                        None if got.kind == DATA else got.indices.astype(np.int64))
            buf = got
        return out

    def _broadcast(self, seed, root):
        N, r = self.world_size, self.rank
        if r == root:
            value = int(seed)
            self._send(WireMessage(SEED, np.array([value], dtype=np.uint64)))
            return value
        msg = self._recv()
        if msg.kind != SEED or msg.values.size != 1:
            raise TransportFailure("malformed seed frame")
        if (r + 1) % N != root:
            self._send(msg)
        return int(msg.values[0])
