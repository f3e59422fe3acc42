"""Synthetic distributed objectives with known smoothness and noise level.

Every problem exposes the same small surface used by the optimizers:
``num_nodes``, ``dim``, ``sigma``, ``L``, ``f_star``, ``local_grad(rank, x)``,
``grad(x)`` and ``loss(x)``, where the global objective is the average of
the per-node ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.special

from .core import NormalStream, derive_seed, reshape_vector, row_norms_sq

# stream keys for derive_seed
_KEY_SPECTRUM, _KEY_TARGET, _KEY_ROTATION, _KEY_DRIFT, _KEY_PERM = range(1, 6)
_KEY_FEATURES, _KEY_LABELS, _KEY_SHIFT = range(6, 9)


@dataclass
class QuadraticProblem:
    """f_i(x) = 1/2 x^T A_i x - b_i^T x, averaged over nodes."""

    A: list
    b: list
    sigma: float = 0.0
    A_mean: np.ndarray = field(init=False, repr=False)
    b_mean: np.ndarray = field(init=False, repr=False)
    x_star: np.ndarray = field(init=False, repr=False)
    f_star: float = field(init=False)
    L: float = field(init=False)

    def __post_init__(self):
        if len(self.A) != len(self.b) or not self.A:
            raise ValueError("need one (A_i, b_i) pair per node")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.A = [np.asarray(a, dtype=np.float64) for a in self.A]
        self.b = [np.asarray(v, dtype=np.float64) for v in self.b]
        d = self.b[0].size
        for a, v in zip(self.A, self.b):
            if a.shape != (d, d) or v.shape != (d,):
                raise ValueError("inconsistent problem dimensions")
            if not np.allclose(a, a.T, atol=1e-12):
                raise ValueError("A_i must be symmetric")
        self.A_mean = sum(self.A) / len(self.A)
        self.b_mean = sum(self.b) / len(self.b)
        eig = np.linalg.eigvalsh(self.A_mean)
        if eig[0] <= 0:
            raise ValueError("average curvature must be positive definite")
        self.L = float(eig[-1])
        self.mu_min = float(eig[0])
        self.x_star = np.linalg.solve(self.A_mean, self.b_mean)
        self.f_star = -0.5 * float(self.b_mean @ self.x_star)

    @property
    def num_nodes(self) -> int:
        return len(self.A)

    @property
    def dim(self) -> int:
        return self.b[0].size

    def local_grad(self, rank: int, x) -> np.ndarray:
        return self.A[rank] @ x - self.b[rank]

    def local_loss(self, rank: int, x) -> float:
        return 0.5 * float(x @ (self.A[rank] @ x)) - float(self.b[rank] @ x)

    def grad(self, x) -> np.ndarray:
        return self.A_mean @ x - self.b_mean

    def loss(self, x) -> float:
        return 0.5 * float(x @ (self.A_mean @ x)) - float(self.b_mean @ x)


def full_grad(problem, rank: int, x) -> np.ndarray:
    """Exact local gradient of node ``rank``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.dim,):
        raise ValueError(f"x has shape {x.shape}, problem dimension is {problem.dim}")
    return problem.local_grad(rank, x)


def _random_rotation(stream, d, scale):
    S = stream.normal(d * d).reshape(d, d) / np.sqrt(d)
    return scipy.linalg.expm(scale * (S - S.T) / 2.0)


def make_row_structured_quadratic(seed: int, d: int, m: int, N: int,
                                  condition: float = 10.0, heterogeneity: float = 0.0,
                                  sigma: float = 0.0, row_decay: float = 1.5) -> QuadraticProblem:
    """Quadratic whose reshaped gradients carry a few dominant rows.

    The minimiser ``x*`` is drawn with row scales ``(p + 1) ** -row_decay``
    (rows randomly permuted), so at ``x0 = 0`` the gradient mass sits in a
    handful of rows. Curvatures are log-spaced in ``[1, condition]``.
    ``heterogeneity`` rotates each node's eigenbasis away from the shared
    one and adds zero-mean linear drift; the global minimiser is unchanged.
    The global problem does not depend on ``N`` when ``heterogeneity == 0``.
    """
    if d % m:
        raise ValueError(f"d={d} must be divisible by m={m}")
    if condition < 1 or heterogeneity < 0 or N < 1:
        raise ValueError("need condition >= 1, heterogeneity >= 0, N >= 1")
    n = d // m

    spectrum = np.logspace(0.0, np.log10(condition), d)
    perm = np.argsort(NormalStream(derive_seed(seed, _KEY_SPECTRUM)).normal(d), kind="stable")
    lam = spectrum[perm]

    row_scale = (np.arange(m) + 1.0) ** -row_decay
    row_perm = np.argsort(NormalStream(derive_seed(seed, _KEY_PERM)).normal(m), kind="stable")
    target = NormalStream(derive_seed(seed, _KEY_TARGET)).normal(d).reshape(m, n)
    target *= row_scale[row_perm][:, None]
    target *= np.sqrt(m / row_norms_sq(target).sum())
    x_target = target.reshape(-1)

    A, b = [], []
    base = np.diag(lam)
    if heterogeneity == 0:
        A = [base] * N
        b = [base @ x_target] * N
    else:
        drift = NormalStream(derive_seed(seed, _KEY_DRIFT)).normal(N * d).reshape(N, d)
        drift -= drift.mean(axis=0)
        for i in range(N):
            Q = _random_rotation(NormalStream(derive_seed(seed, _KEY_ROTATION, i)), d, heterogeneity)
            Ai = Q @ base @ Q.T
            Ai = 0.5 * (Ai + Ai.T)
            A.append(Ai)
            b.append(Ai @ x_target + heterogeneity * drift[i])
    return QuadraticProblem(A, b, sigma)


@dataclass
class LogisticProblem:
    """Ridge-regularised logistic regression, one data shard per node."""

    X: list
    y: list
    lam: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        self.X = [np.asarray(x, dtype=np.float64) for x in self.X]
        self.y = [np.asarray(v, dtype=np.float64) for v in self.y]
        if any(set(np.unique(v)) - {-1.0, 1.0} for v in self.y):
            raise ValueError("labels must be +-1")
        if self.lam < 0 or self.sigma < 0:
            raise ValueError("lam and sigma must be non-negative")
        gram = sum(x.T @ x / x.shape[0] for x in self.X) / len(self.X)
        # the logistic loss has curvature at most 1/4
        self.L = 0.25 * float(np.linalg.eigvalsh(gram)[-1]) + self.lam
        res = scipy.optimize.minimize(self.loss, np.zeros(self.dim), jac=self.grad,
                                      method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15,
                                                                  "maxiter": 10_000})
        self.x_star = res.x
        self.f_star = float(res.fun)

    @property
    def num_nodes(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X[0].shape[1]

    def local_loss(self, rank, x) -> float:
        margins = self.y[rank] * (self.X[rank] @ x)
        return float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * self.lam * float(x @ x)

    def local_grad(self, rank, x) -> np.ndarray:
        X, y = self.X[rank], self.y[rank]
        margins = y * (X @ x)
        weights = -y * scipy.special.expit(-margins)
        return X.T @ weights / X.shape[0] + self.lam * x

    def loss(self, x) -> float:
        return sum(self.local_loss(i, x) for i in range(self.num_nodes)) / self.num_nodes

    def grad(self, x) -> np.ndarray:
        return sum(self.local_grad(i, x) for i in range(self.num_nodes)) / self.num_nodes


def make_logistic(seed: int, d: int, N: int, samples: int = 64, lam: float = 1e-2,
                  sigma: float = 0.0, heterogeneity: float = 0.0,
                  label_noise: float = 0.1) -> LogisticProblem:
    """Synthetic linearly-separable-ish data with per-node feature shifts."""
    w_true = NormalStream(derive_seed(seed, _KEY_TARGET)).normal(d)
    shifts = NormalStream(derive_seed(seed, _KEY_SHIFT)).normal(N * d).reshape(N, d)
    X, y = [], []
    for i in range(N):
        feats = NormalStream(derive_seed(seed, _KEY_FEATURES, i)).normal(samples * d).reshape(samples, d)
        feats += heterogeneity * shifts[i]
        noise = NormalStream(derive_seed(seed, _KEY_LABELS, i)).normal(samples)
        labels = np.where(feats @ w_true / np.sqrt(d) + label_noise * noise >= 0, 1.0, -1.0)
        X.append(feats)
        y.append(labels)
    return LogisticProblem(X, y, lam, sigma)


class GradOracle:
    """Stochastic gradient of one node: exact gradient plus Gaussian noise.

    Noise has per-coordinate variance ``sigma**2 / d`` so the expected
    squared norm of the noise is exactly ``sigma**2``. Noise vectors are
    consecutive length-``d`` slices of one normal stream, drawn in blocks
    that grow geometrically. Blocks always hold an even number of values,
    so the slices do not depend on the block schedule.
    """

    max_block_values = 1 << 16

    def __init__(self, problem, rank: int, seed: int):
        self.problem = problem
        self.rank = rank
        self.stream = NormalStream(seed)
        self._scale = problem.sigma / np.sqrt(problem.dim)
        self._block = np.empty((0, problem.dim))
        self._next = 0
        self._rows = 2

    def full_grad(self, x) -> np.ndarray:
        return full_grad(self.problem, self.rank, x)

    def noise(self) -> np.ndarray:
        if self._next == len(self._block):
            d = self.problem.dim
            rows = self._rows
            self._rows = min(2 * rows, max(2, 2 * (self.max_block_values // (2 * d))))
            self._block = self.stream.normal(rows * d).reshape(rows, d)
            self._block *= self._scale
            self._next = 0
        self._next += 1
        return self._block[self._next - 1]

    def stochastic_grad(self, x) -> np.ndarray:
        g = self.full_grad(x)
        if self.problem.sigma > 0:
            g = g + self.noise()
        return g

    def batch_grad(self, x, batch: int) -> np.ndarray:
        """Average of ``batch`` independent stochastic gradients at ``x``."""
        if batch < 1:
            raise ValueError("batch must be positive")
        g = self.full_grad(x)
        if self.problem.sigma == 0:
            return g
        acc = np.zeros_like(g)
        for _ in range(batch):
            acc += self.noise()
        return g + acc / batch


def stochastic_grad(oracle: GradOracle, x) -> np.ndarray:
    return oracle.stochastic_grad(x)


def gradient_rows(problem, rank, x, m) -> np.ndarray:
    """Local gradient reshaped to ``m`` rows; handy for inspecting structure."""
    return reshape_vector(full_grad(problem, rank, x), m)
