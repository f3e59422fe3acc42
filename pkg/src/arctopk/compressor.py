"""Row-sparsifying compressors for m x n gradient blocks.

``arc`` selects rows by the sketched importance of the *averaged* block, so
every node ends up with the same support and the masked rows can be summed
with a plain all-reduce. The baselines are independent per-node row Top-K
(needs an all-gather of values and indices), shared-seed Rand-K, and dense.

Selections are sorted ``int64`` index arrays. Ties in every top-K are broken
toward the smaller index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collective import SoloCommunicator, ordered_mean, run_spmd, selected_rows
from .core import NormalStream, frobenius_norm_sq, gaussian_matrix, row_norms_sq
from .errors import DimensionMismatch, IndexOutOfRange, ShapeMismatch

METHODS = ("dense", "topk", "randk", "arc")


@dataclass(frozen=True)
class CompressorConfig:
    m: int
    mu: float
    r: int = 1
    K: int = field(init=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.r < 1:
            raise ValueError("sketch width r must be positive")
        object.__setattr__(self, "K", selected_rows(self.mu, self.m))


@dataclass
class RoundResult:
    local: np.ndarray  # this node's C_local, dense m x n with zero rows
    average: np.ndarray  # (1/N) sum of every node's C_local
    selection: np.ndarray


def top_k_indices(scores, K: int) -> np.ndarray:
    """Sorted indices of the K largest scores; ties go to the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= K <= scores.size:
        raise ValueError(f"K={K} outside [1, {scores.size}]")
    return _top_k(scores, K)


def _top_k(scores, K):
    return np.sort(np.argsort(-scores, kind="stable")[:K])


def sketch_local(G, V) -> np.ndarray:
    """``(1/sqrt(r)) * G @ V`` for ``G`` m x n and ``V`` n x r."""
    G = np.asarray(G, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if G.ndim != 2 or V.ndim != 2 or G.shape[1] != V.shape[0]:
        raise DimensionMismatch(f"cannot sketch {G.shape} with {V.shape}")
    return (G @ V) / np.sqrt(V.shape[1])


def row_importance(P, K: int):
    """Row importance ``diag(P P^T)`` and the indices of its top-K entries."""
    sigma = row_norms_sq(P)
    return sigma, top_k_indices(sigma, K)


def _check_selection(sel, m):
    sel = np.asarray(sel, dtype=np.int64).reshape(-1)
    if sel.size == 0:
        raise ValueError("selection must contain at least one row")
    if sel.min() < 0 or sel.max() >= m:
        raise IndexOutOfRange(f"selection {sel.tolist()} outside [0, {m})")
    return sel


def mask_rows(G, sel) -> np.ndarray:
    """Keep the rows listed in ``sel``; every other row becomes exactly zero."""
    G = np.asarray(G, dtype=np.float64)
    sel = _check_selection(sel, G.shape[0])
    out = np.zeros_like(G)
    out[sel] = G[sel]
    return out


def topk_rows_local(G, K: int):
    """Per-node row Top-K by exact row norm (supports differ across nodes)."""
    G = np.asarray(G, dtype=np.float64)
    sel = top_k_indices(row_norms_sq(G), K)
    return mask_rows(G, sel), sel


def coord_topk(g, K: int) -> np.ndarray:
    """Keep the K largest-magnitude coordinates of a vector."""
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    keep = top_k_indices(np.abs(g), K)
    out[keep] = g[keep]
    return out


def randk_rows_shared(seed: int, m: int, K: int) -> np.ndarray:
    """Uniform random K-subset of ``range(m)``, a pure function of ``seed``.

    Partial Fisher-Yates over the first K positions.
    """
    if not 1 <= K <= m:
        raise ValueError(f"K={K} outside [1, {m}]")
    stream = NormalStream(seed)
    perm = list(range(m))
    for i in range(K):
        j = i + stream.below(m - i)
        perm[i], perm[j] = perm[j], perm[i]
    return np.sort(np.array(perm[:K], dtype=np.int64))


def compression_error_sq(original, compressed) -> float:
    original = np.asarray(original, dtype=np.float64)
    compressed = np.asarray(compressed, dtype=np.float64)
    if original.shape != compressed.shape:
        raise ShapeMismatch(f"{original.shape} vs {compressed.shape}")
    return frobenius_norm_sq(original - compressed)


def _masked(G, sel):
    out = np.zeros_like(G)
    out[sel] = G[sel]
    return out


def _reduce_rows(G, sel, comm) -> np.ndarray:
    # only the K selected rows go on the wire; indices are implied by the
    # shared selection
    avg = np.zeros_like(G)
    avg[sel] = comm.all_reduce_avg(G[sel])
    return avg


def arc_topk_local(G, K: int, r: int, comm, seed: int | None = None, root: int = 0) -> RoundResult:
    """One node's part of an ARC-Top-K round.

    Root's seed is broadcast, all nodes build the same Gaussian ``V``,
    sketches are averaged, and the top-K rows of the averaged sketch form
    the shared selection. The masked rows are then averaged.
    """
    G = np.asarray(G, dtype=np.float64)
    m, n = G.shape
    if not 1 <= K <= m:
        raise ValueError(f"K={K} outside [1, {m}]")
    seed = comm.broadcast_seed(seed, root=root)
    V = gaussian_matrix(seed, n, r)
    P = comm.all_reduce_avg(sketch_local(G, V))
    sel = _top_k(row_norms_sq(P), K)
    return RoundResult(_masked(G, sel), _reduce_rows(G, sel, comm), sel)


def randk_local(G, K: int, comm, seed: int | None = None, root: int = 0) -> RoundResult:
    G = np.asarray(G, dtype=np.float64)
    seed = comm.broadcast_seed(seed, root=root)
    sel = randk_rows_shared(seed, G.shape[0], K)
    return RoundResult(_masked(G, sel), _reduce_rows(G, sel, comm), sel)


def topk_local(G, K: int, comm) -> RoundResult:
    """Independent row Top-K; values and indices travel by all-gather."""
    G = np.asarray(G, dtype=np.float64)
    local, sel = topk_rows_local(G, K)
    parts = comm.all_gather(G[sel].reshape(-1), sel)
    scattered = []
    for values, idx in parts:
        dense = np.zeros_like(G)
        dense[idx] = values.reshape(idx.size, G.shape[1])
        scattered.append(dense)
    return RoundResult(local, ordered_mean(scattered), sel)


def dense_local(G, comm) -> RoundResult:
    G = np.asarray(G, dtype=np.float64)
    return RoundResult(G.copy(), comm.all_reduce_avg(G), np.arange(G.shape[0]))


@dataclass
class RowCompressor:
    """Dispatches one compression round for a given method."""

    method: str
    K: int = 1
    r: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")

    @classmethod
    def from_config(cls, method: str, cfg: CompressorConfig) -> "RowCompressor":
        return cls(method, cfg.K, cfg.r)

    def __call__(self, G, comm, seed: int | None = None) -> RoundResult:
        if self.method == "arc":
            return arc_topk_local(G, self.K, self.r, comm, seed)
        if self.method == "randk":
            return randk_local(G, self.K, comm, seed)
        if self.method == "topk":
            return topk_local(G, self.K, comm)
        return dense_local(G, comm)


def _check_locals(local_blocks):
    blocks = [np.asarray(G, dtype=np.float64) for G in local_blocks]
    if not blocks:
        raise ValueError("need at least one node")
    shape = blocks[0].shape
    if len(shape) != 2 or any(G.shape != shape for G in blocks):
        raise ShapeMismatch(f"node blocks disagree on shape: {[G.shape for G in blocks]}")
    return blocks


def run_round(method: str, local_blocks, K: int, r: int = 1, seed: int = 0,
              scheduler: str = "sequential"):
    """Run one round of ``method`` over in-process nodes.

    Returns ``(average, [local C_local per node], [selection per node],
    [ledger per node])``.
    """
    blocks = _check_locals(local_blocks)
    compressor = RowCompressor(method, K, r)

    def node(comm):
        res = compressor(blocks[comm.rank], comm, seed if comm.rank == 0 else None)
        return res, comm.ledger

    out = run_spmd(len(blocks), node, scheduler=scheduler)
    results = [res for res, _ in out]
    return (results[0].average, [res.local for res in results],
            [res.selection for res in results], [led for _, led in out])


def arc_topk_round(local_blocks, cfg: CompressorConfig, seed: int):
    """Algorithm-level ARC-Top-K over N in-process nodes.

    Returns ``(global_average, per_node_locals, selection)``.
    """
    blocks = _check_locals(local_blocks)
    if blocks[0].shape[0] != cfg.m:
        raise ShapeMismatch(f"blocks have {blocks[0].shape[0]} rows, config says m={cfg.m}")
    if len(blocks) == 1:
        res = arc_topk_local(blocks[0], cfg.K, cfg.r, SoloCommunicator(), seed)
        return res.average, [res.local], res.selection
    avg, locals_, sels, _ = run_round("arc", blocks, cfg.K, cfg.r, seed)
    return avg, locals_, sels[0]
