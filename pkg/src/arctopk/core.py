"""Numerical substrate: row-major reshaping, seeded Gaussian streams, norms.

Matrices are plain C-contiguous ``float64`` numpy arrays. The random
streams are SplitMix64 in counter mode with an explicit Box-Muller
transform, computed with plain numpy integer/float arithmetic, so the
values never depend on numpy's own sampling algorithms. Same seed, same
matrix, on every rank and every transport.
"""
from __future__ import annotations

import functools

import numpy as np

from .errors import NonDivisibleDimension, DimensionMismatch

#: Version tag of the normal-variate generator below. Bump on any change
#: that alters generated values.
GENERATOR_VERSION = "splitmix64-boxmuller-v1"

_TWO_POW_M53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_UINT64_MASK = (1 << 64) - 1


def as_matrix(data, rows=None, cols=None) -> np.ndarray:
    """Validate ``data`` as a finite 2-D float64 matrix (copying if needed)."""
    a = np.array(data, dtype=np.float64, order="C")
    if a.ndim == 1 and rows is not None:
        if cols is None:
            cols = a.size // rows if rows else 0
        if a.size != rows * cols:
            raise DimensionMismatch(f"{a.size} entries cannot fill {rows}x{cols}")
        a = a.reshape(rows, cols)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatch(f"matrix dimensions must be positive, got {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise DimensionMismatch(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatch(f"expected {cols} cols, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN or Inf")
    return a


def reshape_vector(g, m: int) -> np.ndarray:
    """Reshape a length-d vector into an ``m x (d/m)`` row-major matrix.

    ``M[p, q] == g[p * n + q]``. Raises :class:`NonDivisibleDimension` when
    ``m`` does not divide ``d``; padding is the caller's responsibility.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise DimensionMismatch("reshape_vector expects a 1-D vector")
    if m < 1:
        raise ValueError("m must be positive")
    d = g.size
    if d == 0 or d % m:
        raise NonDivisibleDimension(f"d={d} is not divisible by m={m}")
    return np.ascontiguousarray(g.reshape(m, d // m))


def flatten(M) -> np.ndarray:
    """Inverse of :func:`reshape_vector`."""
    return np.ascontiguousarray(M, dtype=np.float64).reshape(-1).copy()


def padded_length(d: int, m: int) -> int:
    return -(-d // m) * m


def pad_to_multiple(g, m: int) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    extra = padded_length(g.size, m) - g.size
    if extra == 0:
        return g
    return np.concatenate([g, np.zeros(extra)])


def derive_seed(master: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from a master seed and integer keys."""
    ss = np.random.SeedSequence(int(master) & _UINT64_MASK, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN_INT = int(_GOLDEN)
_MIX1_INT, _MIX2_INT = int(_MIX1), int(_MIX2)
# below this many words the pure-integer path beats numpy's call overhead
_SCALAR_WORDS = 4


def splitmix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function on a uint64 array (wrapping, in place)."""
    z ^= z >> _S30
    z *= _MIX1
    z ^= z >> _S27
    z *= _MIX2
    z ^= z >> _S31
    return z


def splitmix64_int(z: int) -> int:
    """Same function on one Python int (exact, so bit-identical)."""
    z ^= z >> 30
    z = (z * _MIX1_INT) & _UINT64_MASK
    z ^= z >> 27
    z = (z * _MIX2_INT) & _UINT64_MASK
    return z ^ (z >> 31)


class NormalStream:
    """Deterministic stream of raw words, bounded integers and normals.

    SplitMix64: word ``k`` (1-based) of a stream is
    ``splitmix64(seed + k * 0x9E3779B97F4A7C15)``. Every draw consumes a
    fixed number of words, so streams built from the same seed stay in
    lockstep as long as they are asked for the same sequence of draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _UINT64_MASK
        self._seed64 = np.uint64(self.seed)
        self._counter = 0

    def _word(self) -> int:
        self._counter += 1
        return splitmix64_int((self.seed + self._counter * _GOLDEN_INT) & _UINT64_MASK)

    def raw(self, count: int) -> np.ndarray:
        if count <= _SCALAR_WORDS:
            return np.array([self._word() for _ in range(count)], dtype=np.uint64)
        z = np.arange(self._counter + 1, self._counter + count + 1, dtype=np.uint64)
        self._counter += count
        z *= _GOLDEN
        z += self._seed64
        return splitmix64(z)

    def normal(self, size: int) -> np.ndarray:
        """``size`` i.i.d. N(0, 1) draws via Box-Muller on pairs of words."""
        if size <= 0:
            return np.zeros(0)
        pairs = (size + 1) // 2
        words = self.raw(2 * pairs)
        words >>= _S11
        u = words.astype(np.float64)
        u *= _TWO_POW_M53
        # u1 in (0, 1] keeps the log finite (the shift by 2^-53 is exact);
        # u2 in [0, 1)
        u1 = u[0::2]
        u1 += _TWO_POW_M53
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = _TWO_PI * u[1::2]
        out = np.empty(2 * pairs)
        np.multiply(radius, np.cos(theta), out=out[0::2])
        np.multiply(radius, np.sin(theta), out=out[1::2])
        return out[:size]

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection (no modulo bias)."""
        if bound < 1:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            w = self._word()
            if w < limit:
                return w % bound

    def next_seed(self) -> int:
        return self._word()


def gaussian_matrix(seed: int, n: int, r: int) -> np.ndarray:
    """Shared ``n x r`` standard-normal matrix, filled row-major from ``seed``.

    The result is read-only: in-process ranks asking for the same seed in
    the same round share one cached array.
    """
    if n < 1 or r < 1:
        raise ValueError("n and r must be positive")
    return _gaussian_matrix(int(seed) & _UINT64_MASK, int(n), int(r))


@functools.lru_cache(maxsize=16)
def _gaussian_matrix(seed, n, r):
    V = NormalStream(seed).normal(n * r).reshape(n, r)
    V.flags.writeable = False
    return V


def row_norms_sq(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    return np.einsum("ij,ij->i", M, M)


def frobenius_norm_sq(M) -> float:
    return float(row_norms_sq(M).sum())
