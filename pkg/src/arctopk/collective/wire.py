"""Length-prefixed binary frames used by the TCP transport.

Layout (all little-endian)::

    kind   : u8
    count  : u32          number of 8-byte payload words
    payload: count * f64  (u64 for SEED frames)
    -- only for kinds carrying indices --
    icount : u32
    indices: icount * u32
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import TransportFailure

DATA = 1
INDEXED = 2
SEED = 3
HELLO = 4
TABLE = 5

KINDS = (DATA, INDEXED, SEED, HELLO, TABLE)
INDEX_KINDS = (INDEXED, HELLO, TABLE)

_HEADER = struct.Struct("<BI")
_COUNT = struct.Struct("<I")
_F64 = np.dtype("<f8")
_U64 = np.dtype("<u8")
_U32 = np.dtype("<u4")


@dataclass
class WireMessage:
    kind: int
    values: np.ndarray
    indices: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown frame kind {self.kind}")
        dtype = _U64 if self.kind == SEED else _F64
        self.values = np.ascontiguousarray(self.values, dtype=dtype).reshape(-1)
        if self.kind in INDEX_KINDS:
            idx = np.zeros(0) if self.indices is None else np.asarray(self.indices)
            if idx.size and (idx.min() < 0 or idx.max() > 0xFFFFFFFF):
                raise ValueError("indices must fit in u32")
            self.indices = np.ascontiguousarray(idx, dtype=_U32).reshape(-1)
        elif self.indices is not None:
            raise ValueError(f"frame kind {self.kind} carries no indices")

    def encode(self) -> bytes:
        parts = [_HEADER.pack(self.kind, self.values.size), self.values.tobytes()]
        if self.kind in INDEX_KINDS:
            parts += [_COUNT.pack(self.indices.size), self.indices.tobytes()]
        return b"".join(parts)

    @classmethod
    def decode(cls, buf: bytes) -> "WireMessage":
        msg, used = _parse(memoryview(buf))
        if used != len(buf):
            raise TransportFailure(f"{len(buf) - used} trailing bytes after frame")
        return msg


def _parse(view):
    if len(view) < _HEADER.size:
        raise TransportFailure("truncated frame header")
    kind, count = _HEADER.unpack_from(view, 0)
    if kind not in KINDS:
        raise TransportFailure(f"unknown frame kind {kind}")
    off = _HEADER.size
    end = off + 8 * count
    if len(view) < end:
        raise TransportFailure(f"declared {count} entries, payload truncated")
    values = np.frombuffer(view[off:end], dtype=_U64 if kind == SEED else _F64).copy()
    indices = None
    if kind in INDEX_KINDS:
        if len(view) < end + _COUNT.size:
            raise TransportFailure("truncated index count")
        (icount,) = _COUNT.unpack_from(view, end)
        start = end + _COUNT.size
        end = start + 4 * icount
        if len(view) < end:
            raise TransportFailure(f"declared {icount} indices, payload truncated")
        indices = np.frombuffer(view[start:end], dtype=_U32).copy()
    return WireMessage(kind, values, indices), end


def _recv_exact(sock, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        try:
            chunk = sock.recv(min(remaining, 1 << 20))
        except OSError as exc:
            raise TransportFailure(f"receive failed: {exc}") from exc
        if not chunk:
            raise TransportFailure("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_message(sock, msg: WireMessage) -> None:
    try:
        sock.sendall(msg.encode())
    except OSError as exc:
        raise TransportFailure(f"send failed: {exc}") from exc


def recv_message(sock) -> WireMessage:
    head = _recv_exact(sock, _HEADER.size)
    kind, count = _HEADER.unpack(head)
    if kind not in KINDS:
        raise TransportFailure(f"unknown frame kind {kind}")
    body = _recv_exact(sock, 8 * count)
    tail = b""
    if kind in INDEX_KINDS:
        icount_raw = _recv_exact(sock, _COUNT.size)
        (icount,) = _COUNT.unpack(icount_raw)
        tail = icount_raw + _recv_exact(sock, 4 * icount)
    return WireMessage.decode(head + body + tail)
