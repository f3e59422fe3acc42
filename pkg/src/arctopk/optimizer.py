"""EF21M with a pluggable row compressor, and compressed momentum SGD.

Each rank runs the same code against its own communicator (SPMD). The
per-node EF21M recursion, for step ``t``::

    h_t = (1 - eta) h_{t-1} + eta * grad F_i(x_t)
    g_t = g_{t-1} + C_local(h_t - g_{t-1})
    x_{t+1} = x_t - gamma * mean_i g_t

Before the first step ``h`` is a ``B_init``-sample gradient average at
``x_0`` and ``g = h``. The compressor sees the difference ``h_t - g_{t-1}``
reshaped into ``m`` rows (zero-padded if ``m`` does not divide ``d``), and
only the compressed differences are averaged, so every rank can keep
``mean_i g_t`` up to date locally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .collective import run_spmd
from .compressor import RowCompressor
from .core import NormalStream, derive_seed, pad_to_multiple, reshape_vector
from .errors import NonFiniteIterate
from .workload import GradOracle

OPTIMIZERS = ("ef21m", "msgd")

# derive_seed keys shared by every transport
_KEY_NOISE = 101
_KEY_COMPRESSOR = 102


@dataclass(frozen=True)
class Ef21mConfig:
    gamma: float
    eta: float = 1.0
    B_init: int = 1
    T: int = 0
    beta: float = 0.9  # heavy-ball constant of the msgd baseline

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.B_init < 1:
            raise ValueError("B_init must be at least 1")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")


@dataclass
class Ef21mNodeState:
    h: np.ndarray  # momentum tracker
    g: np.ndarray  # gradient tracker
    g_avg: np.ndarray  # mean of g over nodes, identical on every rank


@dataclass
class MsgdState:
    u: np.ndarray


@dataclass
class TrainRecord:
    t: int
    loss: float
    grad_norm_sq: float
    cumulative_entries: int


def _compress_vector(v, m, compressor, comm, seed):
    """Compress a length-d vector as an m-row block; return (local, average)."""
    d = v.size
    block = v.reshape(m, d // m) if d % m == 0 else reshape_vector(pad_to_multiple(v, m), m)
    res = compressor(block, comm, seed)
    return res.local.reshape(-1)[:d], res.average.reshape(-1)[:d]


def ef21m_init(x0, oracle: GradOracle, cfg: Ef21mConfig, comm) -> Ef21mNodeState:
    """``h_0`` from a ``B_init`` batch at ``x_0`` and ``g_0 = h_0``."""
    h = oracle.batch_grad(np.asarray(x0, dtype=np.float64), cfg.B_init)
    g = h.copy()
    return Ef21mNodeState(h, g, comm.all_reduce_avg(g))


def ef21m_step(x, state: Ef21mNodeState, oracle: GradOracle, compressor: RowCompressor,
               cfg: Ef21mConfig, comm, m: int, seed: int | None = None) -> np.ndarray:
    """One EF21M iteration on this rank; updates ``state`` and returns x_{t+1}."""
    state.h = (1.0 - cfg.eta) * state.h + cfg.eta * oracle.stochastic_grad(x)
    local, avg = _compress_vector(state.h - state.g, m, compressor, comm, seed)
    state.g = state.g + local
    state.g_avg = state.g_avg + avg
    return x - cfg.gamma * state.g_avg


def compressed_msgd_step(x, state: MsgdState, oracle: GradOracle, compressor: RowCompressor,
                         cfg: Ef21mConfig, comm, m: int, seed: int | None = None) -> np.ndarray:
    """Compress-then-average heavy-ball step with no residual tracking."""
    _, avg = _compress_vector(oracle.stochastic_grad(x), m, compressor, comm, seed)
    state.u = cfg.beta * state.u + avg
    return x - cfg.gamma * state.u


def _record(problem, t, x, entries):
    gr = problem.grad(x)
    return TrainRecord(t, problem.loss(x), float(gr @ gr), int(entries))


def train_rank(comm, problem, method: str, optimizer: str, cfg: Ef21mConfig,
               m: int, K: int, r: int = 1, seed: int = 0, x0=None, record: bool | None = None,
               stop_below: float | None = None):
    """Run ``cfg.T`` steps on this rank; rank 0 returns the record stream.

    With ``stop_below`` set, training ends after the first iterate whose
    global loss is at most that level. Every rank evaluates the same loss at
    the same iterate, so they all stop together.

    Raises :class:`NonFiniteIterate` (carrying the partial records) as soon
    as the iterate stops being finite.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {optimizer!r}; choose from {OPTIMIZERS}")
    if record is None:
        record = comm.rank == 0
    compressor = RowCompressor(method, K, r)
    oracle = GradOracle(problem, comm.rank, derive_seed(seed, _KEY_NOISE, comm.rank))
    # identical on every rank; only the root's draw is ever used
    seeds = NormalStream(derive_seed(seed, _KEY_COMPRESSOR))
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=np.float64)

    if optimizer == "ef21m":
        state = ef21m_init(x, oracle, cfg, comm)
        step = ef21m_step
    else:
        state = MsgdState(np.zeros(problem.dim))
        step = compressed_msgd_step

    records = []
    if record:
        records.append(_record(problem, 0, x, comm.ledger.total))
    # overflow on the way to a non-finite iterate is reported by the guard
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.T):
            x = step(x, state, oracle, compressor, cfg, comm, m, seeds.next_seed())
            # a NaN or Inf anywhere makes the sum non-finite
            if not math.isfinite(x.sum()):
                raise NonFiniteIterate(t + 1, records)
            if record:
                records.append(_record(problem, t + 1, x, comm.ledger.total))
            if stop_below is not None and problem.loss(x) <= stop_below:
                break
    return records if record else None


def run_training(problem, method: str, optimizer: str, cfg: Ef21mConfig,
                 m: int, K: int, r: int = 1, seed: int = 0, x0=None, comm=None,
                 scheduler: str = "sequential", stop_below: float | None = None):
    """Train over ``problem.num_nodes`` in-process ranks (or this ``comm``).

    Returns ``(records, ledger)`` where the ledger is rank 0's.
    """
    if comm is not None:
        return (train_rank(comm, problem, method, optimizer, cfg, m, K, r, seed, x0,
                           stop_below=stop_below), comm.ledger)

    def node(c):
        return (train_rank(c, problem, method, optimizer, cfg, m, K, r, seed, x0,
                           stop_below=stop_below), c.ledger)

    return run_spmd(problem.num_nodes, node, scheduler=scheduler)[0]
