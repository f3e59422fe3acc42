import numpy as np
import pytest

from arctopk.core import reshape_vector, row_norms_sq
from arctopk.workload import (
    GradOracle,
    QuadraticProblem,
    full_grad,
    gradient_rows,
    make_logistic,
    make_row_structured_quadratic,
    stochastic_grad,
)


def power_iteration(A, iters=5000):
    v = np.ones(A.shape[0]) / np.sqrt(A.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        lam_new = float(v @ w)
        v = w / np.linalg.norm(w)
        if abs(lam_new - lam) < 1e-14 * abs(lam_new):
            break
        lam = lam_new
    return lam_new


def test_identity_gradient():
    p = QuadraticProblem([np.eye(2)], [np.zeros(2)])
    assert full_grad(p, 0, [1.0, 2.0]).tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        full_grad(p, 0, [1.0, 2.0, 3.0])


def test_problem_validation():
    with pytest.raises(ValueError):
        QuadraticProblem([np.array([[1.0, 2.0], [0.0, 1.0]])], [np.zeros(2)])
    with pytest.raises(ValueError):
        QuadraticProblem([np.zeros((2, 2))], [np.zeros(2)])
    with pytest.raises(ValueError):
        QuadraticProblem([np.eye(2)], [np.zeros(2)], sigma=-1)
    with pytest.raises(ValueError):
        make_row_structured_quadratic(0, 10, 4, 1)


def test_optimality_and_f_star():
    p = make_row_structured_quadratic(1, 48, 6, 3, heterogeneity=0.7)
    avg = sum(full_grad(p, i, p.x_star) for i in range(3)) / 3
    assert np.linalg.norm(avg) < 1e-10
    assert p.f_star == pytest.approx(p.loss(p.x_star), abs=1e-10)


def test_finite_difference_gradient():
    p = make_row_structured_quadratic(2, 32, 4, 2, heterogeneity=0.5)
    rng = np.random.default_rng(0)
    x, v = rng.standard_normal(32), rng.standard_normal(32)
    h = 1e-5
    for i in range(2):
        fd = (p.local_loss(i, x + h * v) - p.local_loss(i, x - h * v)) / (2 * h)
        assert abs(fd - full_grad(p, i, x) @ v) <= 1e-6


def test_homogeneous_nodes_share_curvature():
    p = make_row_structured_quadratic(3, 32, 4, 3)
    assert all(np.array_equal(A, p.A[0]) for A in p.A)


def test_unit_condition_is_identity():
    p = make_row_structured_quadratic(4, 16, 4, 1, condition=1.0)
    np.testing.assert_allclose(p.A[0], np.eye(16), atol=1e-14)


def test_global_problem_independent_of_n():
    a = make_row_structured_quadratic(5, 32, 4, 1)
    b = make_row_structured_quadratic(5, 32, 4, 4)
    assert np.array_equal(a.A_mean, b.A_mean) and np.array_equal(a.b_mean, b.b_mean)


def test_smoothness_constant():
    p = make_row_structured_quadratic(6, 64, 8, 2, condition=20, heterogeneity=0.4)
    assert abs(power_iteration(p.A_mean) - p.L) <= 1e-8 * p.L
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x, y = rng.standard_normal(64), rng.standard_normal(64)
        lhs = np.linalg.norm(p.grad(x) - p.grad(y))
        assert lhs <= p.L * np.linalg.norm(x - y) * (1 + 1e-12)


def test_rows_are_skewed_at_origin():
    p = make_row_structured_quadratic(7, 256, 16, 1)
    norms = np.sort(row_norms_sq(gradient_rows(p, 0, np.zeros(256), 16)))[::-1]
    # a quarter of the rows carries most of the mass
    assert norms[:4].sum() > 0.6 * norms.sum()


def test_noiseless_oracle_is_exact():
    p = make_row_structured_quadratic(8, 16, 4, 1)
    x = np.ones(16)
    assert np.array_equal(stochastic_grad(GradOracle(p, 0, 3), x), full_grad(p, 0, x))


def test_oracle_mean_and_variance():
    sigma, d = 0.5, 16
    p = make_row_structured_quadratic(9, d, 4, 1, sigma=sigma)
    oracle = GradOracle(p, 0, 11)
    x = np.ones(d)
    draws = np.array([oracle.stochastic_grad(x) for _ in range(10_000)])
    noise = draws - full_grad(p, 0, x)
    assert np.all(np.abs(noise.mean(axis=0)) <= 3 * sigma / np.sqrt(10_000))
    energy = (noise**2).sum(axis=1).mean()
    assert abs(energy - sigma**2) <= 0.05 * sigma**2


def test_oracle_deterministic_in_seed():
    p = make_row_structured_quadratic(9, 16, 4, 1, sigma=0.3)
    a = [GradOracle(p, 0, 5).stochastic_grad(np.zeros(16)) for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    b = GradOracle(p, 0, 6).stochastic_grad(np.zeros(16))
    assert not np.array_equal(a[0], b)


def test_batch_grad_averages():
    p = make_row_structured_quadratic(9, 16, 4, 1, sigma=1.0)
    g = GradOracle(p, 0, 5).batch_grad(np.zeros(16), 400)
    assert np.linalg.norm(g - full_grad(p, 0, np.zeros(16))) < 0.2
    with pytest.raises(ValueError):
        GradOracle(p, 0, 5).batch_grad(np.zeros(16), 0)


def test_logistic_problem():
    p = make_logistic(0, 10, 3, samples=40, lam=0.05, heterogeneity=0.5)
    assert p.num_nodes == 3 and p.dim == 10
    assert np.linalg.norm(p.grad(p.x_star)) < 1e-6
    rng = np.random.default_rng(2)
    x, v = rng.standard_normal(10), rng.standard_normal(10)
    fd = (p.loss(x + 1e-5 * v) - p.loss(x - 1e-5 * v)) / 2e-5
    assert abs(fd - p.grad(x) @ v) <= 1e-6
    for _ in range(200):
        x, y = rng.standard_normal(10), rng.standard_normal(10)
        assert np.linalg.norm(p.grad(x) - p.grad(y)) <= p.L * np.linalg.norm(x - y) * (1 + 1e-12)


def test_gradient_rows_shape():
    p = make_row_structured_quadratic(1, 12, 3, 1)
    rows = gradient_rows(p, 0, np.zeros(12), 3)
    assert np.array_equal(rows, reshape_vector(full_grad(p, 0, np.zeros(12)), 3))
