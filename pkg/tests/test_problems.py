import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distls.distributed import DistRunConfig, solve
from distls.exceptions import DomainError
from distls.graph import Topology, metropolis_weights
from distls.netsim import Network
from distls.operators import MatrixMap, NonnegIndicator, NonnegL2
from distls.problems import (
    LogDetSmooth,
    PoissonSmooth,
    SeparableBlur,
    build_covariance,
    build_poisson,
    covariance_start,
    gaussian_blur_1d,
    kl_divergence,
    metrics,
    poisson_start,
)
from distls.reference import fd_gradient
from helpers import COVARIANCE_PARAMS, random_spd


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# --- KL and Poisson oracles ----------------------------------------------------

@pytest.mark.parametrize(
    "z, y, expected",
    [([1.0, 2.0], [1.0, 2.0], 0.0), ([2.0], [1.0], 1.0 - math.log(2.0)), ([1.0], [0.0], 1.0)],
)
def test_kl_examples(z, y, expected):
    assert kl_divergence(np.array(z), np.array(y)) == pytest.approx(expected, abs=1e-15)


def test_kl_subnormal_measurement_is_finite():
    assert kl_divergence(np.array([2.0]), np.array([5e-324])) == pytest.approx(2.0)


def test_kl_domain():
    with pytest.raises(DomainError):
        kl_divergence(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=6), st.lists(st.floats(0.0, 1e3), min_size=6, max_size=6))
def test_kl_nonnegative(z, y):
    assert kl_divergence(np.array(z), np.array(y[: len(z)])) >= -1e-9 * (1 + sum(z) + sum(y))


def test_poisson_scalar_example():
    h = PoissonSmooth(MatrixMap(np.ones((1, 1))), np.ones(1), np.array([2.0]))
    assert h.value(np.ones(1)) == pytest.approx(0.0, abs=1e-15)
    assert np.array_equal(h.gradient(np.ones(1)), [0.0])
    with pytest.raises(DomainError):
        h.value(np.array([-2.0]))


def test_poisson_gradient_matches_finite_differences():
    prob, _ = build_poisson(n=3, d=36, noise_seed=2)
    rng = np.random.default_rng(0)
    for h in prob.h:
        for _ in range(5):
            x = rng.uniform(0.0, 5.0, size=36)
            assert rel_err(h.gradient(x), fd_gradient(h, x)) < 1e-5


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_poisson_midpoint_convexity(seed):
    prob, _ = build_poisson(n=2, d=16, noise_seed=seed % 7)
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 10, 16), rng.uniform(0, 10, 16)
    h = prob.h[seed % 2]
    mid = h.value(0.5 * (a + b))
    assert mid <= 0.5 * (h.value(a) + h.value(b)) + 1e-10 * (1 + abs(mid))


def test_poisson_bregman_matches_definition():
    prob, _ = build_poisson(n=1, d=25, noise_seed=1)
    h = prob.h[0]
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 5, 25), rng.uniform(0, 5, 25)
    direct = h.value(b) - h.value(a) - float(h.gradient(a) @ (b - a))
    assert h.bregman(b, a) == pytest.approx(direct, rel=1e-8)


def test_separable_blur_matches_kronecker():
    rng = np.random.default_rng(0)
    A = SeparableBlur(gaussian_blur_1d(4, 0.8), gaussian_blur_1d(4, 1.3, 1))
    x, w = rng.standard_normal(16), rng.standard_normal(16)
    assert np.allclose(A.apply(x), A.dense() @ x, atol=1e-14)
    assert np.allclose(A.adjoint(w), A.dense().T @ w, atol=1e-14)
    assert A.operator_norm == pytest.approx(np.linalg.norm(A.dense(), 2), rel=1e-12)


def test_blur_rows_sum_to_one():
    B = gaussian_blur_1d(10, 1.5, 1)
    assert np.allclose(B.sum(axis=1), 1.0) and np.all(B >= 0)


# --- Poisson builder -----------------------------------------------------------

def test_build_poisson_deterministic():
    _, a = build_poisson(n=3, d=64, noise_seed=5)
    _, b = build_poisson(n=3, d=64, noise_seed=5)
    for ya, yb in zip(a.y, b.y):
        assert np.array_equal(ya, yb)
    _, c = build_poisson(n=3, d=64, noise_seed=6)
    assert not np.array_equal(a.y[0], c.y[0])


def test_build_poisson_shapes_and_wiring():
    prob, inst = build_poisson(n=4, d=64 * 64, zero_noise=True)
    assert prob.n == 4 and prob.d == 4096 and inst.image_shape == (64, 64)
    assert isinstance(prob.f[0], NonnegIndicator)
    prob, inst = build_poisson(n=2, d=30, lam=0.001)
    assert isinstance(prob.f[0], NonnegL2) and inst.image_shape is None
    assert np.all(inst.x_true > 0)
    with pytest.raises(ValueError):
        build_poisson(n=2, d=16, p=8)


def test_poisson_widths_increase_across_agents():
    _, inst = build_poisson(n=4, d=64, zero_noise=True)
    # wider blur spreads a point source further: peak height decreases
    e = np.zeros(64)
    e[27] = 1.0
    peaks = [float(A.apply(e).max()) for A in inst.A]
    assert all(p > q for p, q in zip(peaks, peaks[1:]))


def test_zero_noise_truth_is_stationary():
    prob, inst = build_poisson(n=3, d=49, zero_noise=True)
    for h in prob.h:
        assert h.value(inst.x_true) == pytest.approx(0.0, abs=1e-10)
        assert np.max(np.abs(h.gradient(inst.x_true))) < 1e-12


def test_poisson_start_preserves_measured_mass():
    prob, inst = build_poisson(n=3, d=36, noise_seed=3)
    X = poisson_start(inst)
    for xi, yi, h in zip(X, inst.y, prob.h):
        assert np.all(xi >= 0) and xi.sum() == pytest.approx(yi.sum())
        assert np.isfinite(h.value(xi))


# --- log-det oracle ------------------------------------------------------------

def test_logdet_identity_example():
    h = LogDetSmooth(np.eye(3), 1, 3)
    assert h.value(np.eye(3).ravel()) == pytest.approx(3.0)
    assert np.allclose(h.gradient(np.eye(3)), 0.0)


def test_logdet_scalar_calculus():
    h = LogDetSmooth(np.array([[0.5]]), 3, 1)
    x = 2.0
    assert h.value(np.array([x])) == pytest.approx(-3 * (math.log(x) - x * 0.5))
    assert h.gradient(np.array([x]))[0] == pytest.approx(-3 * (1 / x - 0.5))


def test_logdet_domain():
    h = LogDetSmooth(np.eye(2), 1, 2)
    with pytest.raises(DomainError):
        h.value(np.diag([1.0, -1.0]).ravel())
    assert not h.in_domain(np.zeros(4)) and h.in_domain(np.eye(2).ravel())


def test_logdet_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(5):
        Y = random_spd(4, rng)
        h = LogDetSmooth(Y, 2, 4)
        X = random_spd(4, rng, lo=0.5, hi=2.0)
        assert rel_err(h.gradient(X.ravel()), fd_gradient(h, X.ravel())) < 1e-5


def test_logdet_bregman_matches_definition():
    rng = np.random.default_rng(5)
    h = LogDetSmooth(random_spd(3, rng), 1, 3)
    a, b = random_spd(3, rng, 0.5, 2.0).ravel(), random_spd(3, rng, 0.5, 2.0).ravel()
    direct = h.value(b) - h.value(a) - float(h.gradient(a) @ (b - a))
    assert h.bregman(b, a) == pytest.approx(direct, rel=1e-8)


# --- covariance builder --------------------------------------------------------

def test_build_covariance_deterministic_and_valid():
    prob, inst = build_covariance(seed=3)
    _, again = build_covariance(seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(inst.Y, again.Y))
    assert prob.n == 10 and prob.d == 25
    ev = np.linalg.eigvalsh(inst.X_true)
    assert ev[0] >= 0.7 - 1e-12 and ev[-1] <= 1.8 + 1e-12
    for Y in inst.Y:
        assert np.allclose(Y, Y.T) and np.linalg.eigvalsh(Y)[0] >= -1e-12
    with pytest.raises(ValueError):
        build_covariance(l=2.0, u=1.0)


def test_covariance_iterates_stay_in_box():
    prob, inst = build_covariance(n=4, d=3, seed=1)
    seen = []
    solve(prob, DistRunConfig(params=COVARIANCE_PARAMS, max_iter=60, tol=0.0), Network(prob.mixing.topology),
          covariance_start(inst, 4), callback=lambda k, ctx, out, t: seen.append(out.x_next))
    for X in seen:
        for xi in X:
            M = xi.reshape(3, 3)
            assert np.array_equal(M, M.T)
            assert np.linalg.eigvalsh(M)[0] >= 0.7 - 1e-10


def test_covariance_many_samples_recovers_clamped_inverse():
    prob, inst = build_covariance(n=1, d=3, samples_per_agent=10_000, seed=2)
    # the sample count scales the curvature, so the first linesearch shrinks far
    params = replace(COVARIANCE_PARAMS, max_backtracks=400)
    res = solve(prob, DistRunConfig(params=params, max_iter=5000, tol=1e-9),
                Network(prob.mixing.topology), covariance_start(inst, 1))
    lam, Q = np.linalg.eigh(np.linalg.inv(inst.Y[0]))
    target = (Q * np.clip(lam, 0.7, 1.8)) @ Q.T
    assert rel_err(res.x[0].reshape(3, 3), target) < 1e-6
    assert rel_err(res.x[0].reshape(3, 3), inst.X_true) < 0.1


def test_identical_data_gives_zero_spread():
    prob, inst = build_covariance(n=5, d=3, seed=4, identical=True, topology=Topology.complete(5))
    x_ref = inst.X_true.ravel()
    res = solve(prob, DistRunConfig(params=COVARIANCE_PARAMS, max_iter=50, tol=0.0),
                Network(prob.mixing.topology), covariance_start(inst, 5), x_ref=x_ref)
    assert max(res.trace.column("rel_error_std")) < 1e-12


# --- metrics -------------------------------------------------------------------

def test_metrics_examples():
    W = metropolis_weights(Topology.ring(3)).W
    X1 = np.zeros((3, 2))
    x_ref = np.ones(2)
    X = np.full((3, 2), 0.5)
    m = metrics(x_ref, X1, X, X, W, prox_grad_rounds=7)
    assert m.delta_x == 0.0 and m.feasibility == pytest.approx(0.0, abs=1e-15)
    assert m.rel_error_mean == pytest.approx(0.5) and m.rel_error_std == pytest.approx(0.0, abs=1e-15)
    assert m.prox_grad_rounds == 7
    Y = X.copy()
    Y[0] = [3.0, 3.0]
    m = metrics(x_ref, X1, X, Y, W)
    assert m.delta_x == pytest.approx(np.linalg.norm(Y - X) / np.linalg.norm(X1 - x_ref))
    assert m.rel_error_per_agent[0] == pytest.approx(2.0)
