import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distls.distributed import (
    DistMonitor,
    DistProblem,
    DistRunConfig,
    DistState,
    LSContext,
    _w_term,
    default_tau0,
    dual_update,
    ls_min,
    ls_min_lipshortcut,
    ls_slack,
    ls_sum,
    ls_W_variant,
    lipschitz_cap,
    pg_extra_baseline,
    run_pg_extra,
    solve,
    stepsize_cap,
    trial_prox_step,
)
from distls.exceptions import DivergenceError
from distls.graph import Topology, metropolis_weights
from distls.netsim import Network
from distls.operators import NonnegIndicator, Quadratic, Zero
from distls.reference import centralized_solve, dual_certificate
from distls.saddle import LinesearchParams, solve_saddle
from helpers import (
    nonneg_qp_bruteforce,
    quadratic_consensus_minimizer,
    quadratic_problem,
    random_spd,
    stacked_saddle,
)


def make_ctx(prob, seed, tau_prev=0.3):
    rng = np.random.default_rng(seed)
    n, d = prob.n, prob.d
    x = rng.standard_normal((n, d))
    u = rng.standard_normal((n, d))
    u -= u.mean(axis=0)
    u_prev = rng.standard_normal((n, d))
    u_prev -= u_prev.mean(axis=0)
    grad = np.stack([h.gradient(xi) for h, xi in zip(prob.h, x)])
    return LSContext(x, u, u_prev, grad, tau_prev)


# --- building blocks -----------------------------------------------------------

def test_dual_update_two_agents():
    mix = metropolis_weights(Topology.path(2))
    net = Network(mix.topology)
    u, Wx = dual_update(net, np.array([[1.0], [3.0]]), np.zeros((2, 1)), mix, 2.0)
    assert np.array_equal(Wx, [[2.0], [2.0]])
    assert np.array_equal(u, [[-1.0], [1.0]])
    assert net.neighbor_rounds == 1


def test_dual_update_consensus_leaves_dual_unchanged():
    mix = metropolis_weights(Topology.ring(4))
    u0 = np.array([[1.0], [-1.0], [2.0], [-2.0]])
    u, _ = dual_update(Network(mix.topology), np.full((4, 1), 7.0), u0, mix, 0.5)
    assert np.allclose(u, u0, atol=1e-15)


@given(st.integers(0, 10_000), st.floats(1e-3, 10.0))
def test_dual_update_conserves_zero_sum(seed, tau):
    mix = metropolis_weights(Topology.random_geometric(6, seed=seed))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 3))
    u = rng.standard_normal((6, 3))
    u -= u.mean(axis=0)
    out, _ = dual_update(Network(mix.topology), x, u, mix, tau)
    assert np.max(np.abs(out.sum(axis=0))) < 1e-12 * (1 + np.abs(out).sum())


def test_initial_dual_must_sum_to_zero():
    with pytest.raises(ValueError):
        DistState.initial(np.zeros((2, 1)), 1.0, u0=np.ones((2, 1)))


def test_trial_prox_step_example():
    prob = DistProblem([NonnegIndicator()], [Quadratic(np.eye(2))], metropolis_weights(Topology(1)), 2)
    ctx = LSContext(
        x=np.array([[1.0, 1.0]]),
        u=np.array([[0.5, 0.0]]),
        u_prev=np.array([[0.0, 0.0]]),
        grad=np.array([[1.0, 1.0]]),
        tau_prev=1.0,
    )
    x_new, u_bar = trial_prox_step(prob, ctx, 0, 1.0, 2.0)
    # u_bar = 0.5 + 1*(0.5 - 0) = 1; x - 2*(u_bar + g) = 1 - 2*2 = -3 -> 0
    assert np.array_equal(u_bar, [1.0, 0.0])
    assert np.array_equal(x_new, [0.0, 0.0])
    with pytest.raises(ValueError):
        trial_prox_step(prob, ctx, 0, 0.0, 2.0)


def test_stepsize_cap_values():
    p = LinesearchParams(beta=2.0, delta_K=0.25)
    mix = metropolis_weights(Topology.path(2))
    # lambda_min = 0: sqrt(0.5) / sqrt(2)
    assert stepsize_cap(mix, p) == pytest.approx(0.5)
    assert default_tau0(mix, p) == pytest.approx(0.05)
    single = metropolis_weights(Topology(1))
    assert stepsize_cap(single, p) == math.inf and default_tau0(single, p) == 1.0


@given(st.integers(0, 10_000))
def test_w_term_sums_to_laplacian_form(seed):
    mix = metropolis_weights(Topology.random_geometric(7, seed=seed))
    dx = np.random.default_rng(seed).standard_normal((7, 3))
    w = _w_term(dx, mix.W @ dx)
    dense = float(np.sum(dx * ((np.eye(7) - mix.W) @ dx)))
    assert w.sum() == pytest.approx(dense, rel=1e-10, abs=1e-12)
    assert dense >= -1e-12


# --- linesearch subroutines ----------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_ls_min_ties_reuse_and_larger_recompute(seed):
    prob = quadratic_problem(4, 3, seed)
    # one stiff agent forces the minimum below everybody else's stepsize
    prob.h[2] = Quadratic(np.eye(3) * 8.0, prob.h[2].q)
    ctx = make_ctx(prob, seed)
    ctx.grad[2] = prob.h[2].gradient(ctx.x[2])
    p = LinesearchParams(beta=1.0)
    net = Network(prob.mixing.topology)
    out = ls_min(net, prob, ctx, p, 1.0)
    taus = out.agent_taus
    assert out.tau == min(taus) == taus[2]
    for i in range(4):
        expected = out.backtracks[i] + 1 + (1 if taus[i] > out.tau else 0)
        assert net.prox_grad_evals[i] == expected
        x_ref, _ = trial_prox_step(prob, ctx, i, out.tau, p.beta)
        assert np.array_equal(out.x_next[i], x_ref)
    assert net.allreduce_min_calls == 1 and net.allreduce_sum_calls == 0


def test_lipschitz_shortcut_skips_backtracking():
    prob = quadratic_problem(3, 2, 5)
    ctx = make_ctx(prob, 5)
    p = LinesearchParams(beta=1.0)
    lip = {0: prob.h[0].lipschitz, 2: prob.h[2].lipschitz}
    t0 = min(1.0, lipschitz_cap(lip, p))
    net = Network(prob.mixing.topology)
    out = ls_min_lipshortcut(net, prob, ctx, p, t0, lip)
    assert net.prox_grad_evals[0] == 1 and net.prox_grad_evals[2] == 1
    assert out.backtracks[0] == out.backtracks[2] == 0
    assert ls_slack(prob, ctx, out, p) >= -1e-12
    with pytest.raises(ValueError):
        ls_min_lipshortcut(net, prob, ctx, p, t0, {})


def test_lipschitz_cap_respects_descent():
    p = LinesearchParams(beta=2.0, delta_L=0.5)
    assert lipschitz_cap({0: 4.0, 1: 1.0}, p) == pytest.approx(0.5 / 8.0)
    assert lipschitz_cap({}, p) == math.inf


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["sum", "min", "sum_W", "min_W"]))
def test_accepted_step_has_nonnegative_slack(seed, kind):
    prob = quadratic_problem(4, 3, seed, topology=Topology.random_geometric(4, seed=seed))
    ctx = make_ctx(prob, seed)
    p = LinesearchParams(beta=1.0, max_backtracks=200)
    net = Network(prob.mixing.topology)
    if kind == "sum":
        out = ls_sum(net, prob, ctx, p, 2.0)
    elif kind == "min":
        out = ls_min(net, prob, ctx, p, 2.0)
    else:
        out = ls_W_variant(net, prob, ctx, p, 2.0, kind)
    assert out.tau <= 2.0
    assert ls_slack(prob, ctx, out, p, kind) >= -1e-12


def test_ls_sum_tallies_one_allreduce_per_trial():
    prob = quadratic_problem(3, 2, 1, hi=8.0)
    ctx = make_ctx(prob, 1)
    p = LinesearchParams(beta=1.0)
    net = Network(prob.mixing.topology)
    out = ls_sum(net, prob, ctx, p, 1.0)
    J = out.backtracks[0]
    assert J > 0
    assert net.allreduce_sum_calls == J + 1
    assert net.prox_grad_evals == [J + 1] * 3
    assert out.tau == pytest.approx(p.mu**J)


def test_unknown_W_variant_kind():
    prob = quadratic_problem(2, 1, 0)
    with pytest.raises(ValueError):
        ls_W_variant(Network(prob.mixing.topology), prob, make_ctx(prob, 0), LinesearchParams(), 1.0, "max_W")


def test_run_config_validation():
    with pytest.raises(ValueError):
        DistRunConfig(kind="bogus")
    with pytest.raises(ValueError):
        DistRunConfig(kind="constant")
    with pytest.raises(ValueError):
        DistRunConfig(tau0=-1.0)
    with pytest.raises(ValueError):
        DistRunConfig(lipschitz={0: 0.0})


# --- equivalences --------------------------------------------------------------

@pytest.mark.parametrize("seed, n, d", [(0, 2, 3), (1, 4, 8), (2, 4, 3)])
def test_stacked_equivalence_with_primal_dual(seed, n, d):
    prob = quadratic_problem(n, d, seed)
    sp, U = stacked_saddle(prob)
    p = LinesearchParams(beta=1.0, delta_K=0.4999, tau0=0.2)
    x1 = np.random.default_rng(seed).standard_normal((n, d))
    xs = []
    solve(prob, DistRunConfig(params=p, kind="sum", tau0=0.2, max_iter=30, tol=0.0),
          Network(prob.mixing.topology), x1, callback=lambda k, ctx, out, t: xs.append(out.x_next))
    sad = solve_saddle(sp, np.zeros((n, d)), x1, p, max_iter=30, keep_history=True)
    for a, s in zip(xs, sad.history):
        assert np.max(np.abs(a - s.v)) <= 1e-9


@pytest.mark.parametrize("seed", range(2))
def test_pg_extra_equivalence(seed):
    prob = quadratic_problem(4, 3, seed)
    tau = 10.0
    p = LinesearchParams(beta=tau**-2)
    x1 = np.random.default_rng(seed).standard_normal((4, 3))
    xs = []
    solve(prob, DistRunConfig(params=p, kind="constant", tau0=tau, max_iter=50, tol=0.0),
          Network(prob.mixing.topology), x1, callback=lambda k, ctx, out, t: xs.append(out.x_next))
    base = pg_extra_baseline(prob, x1, 1.0 / tau, Network(prob.mixing.topology), max_iter=50)
    for a, (_, b, _) in zip(xs, base):
        assert np.max(np.abs(a - b)) <= 1e-10


# --- convergence ---------------------------------------------------------------

def test_single_agent_matches_centralized():
    rng = np.random.default_rng(3)
    Q, q = random_spd(4, rng), rng.standard_normal(4)
    prob = DistProblem([NonnegIndicator()], [Quadratic(Q, q)], metropolis_weights(Topology(1)), 4)
    res = solve(prob, DistRunConfig(max_iter=5000, tol=1e-12), Network(prob.mixing.topology), np.ones((1, 4)))
    assert res.trace.status == "converged"
    assert np.allclose(res.x[0], nonneg_qp_bruteforce(Q, q), atol=1e-9)
    assert np.all(np.array(res.trace.column("feasibility")) == 0.0)


def test_infinite_tolerance_stops_after_one_iteration():
    prob = quadratic_problem(3, 2, 0)
    res = solve(prob, DistRunConfig(tol=math.inf), Network(prob.mixing.topology), np.zeros((3, 2)))
    assert len(res.trace) == 1 and res.trace.status == "converged"


@pytest.mark.parametrize("kind", ["sum", "min", "sum_W", "min_W"])
def test_smooth_consensus_matches_linear_solve(kind):
    prob = quadratic_problem(5, 3, 7, f=Zero())
    x_star = quadratic_consensus_minimizer(prob)
    res = solve(prob, DistRunConfig(kind=kind, max_iter=20000, tol=1e-10),
                Network(prob.mixing.topology), np.zeros((5, 3)))
    assert res.trace.status == "converged"
    assert np.max(np.abs(res.x - x_star)) < 1e-7


@pytest.mark.parametrize("kind", ["sum", "min"])
def test_constrained_consensus_matches_centralized(kind):
    prob = quadratic_problem(4, 3, 11)
    ref = centralized_solve(prob, np.zeros(3), tol=1e-12)
    res = solve(prob, DistRunConfig(kind=kind, max_iter=20000, tol=1e-10),
                Network(prob.mixing.topology), np.zeros((4, 3)))
    assert np.max(np.abs(res.x - ref.x_star)) < 1e-7


def test_monitor_phi_nonincreasing():
    prob = quadratic_problem(4, 3, 2)
    ref = centralized_solve(prob, np.zeros(3), tol=1e-13)
    u_hat, _ = dual_certificate(prob, ref.x_star)
    p = LinesearchParams()
    mon = DistMonitor(prob, ref.x_star, u_hat, p.beta)
    res = solve(prob, DistRunConfig(params=p, max_iter=300, tol=0.0), Network(prob.mixing.topology),
                np.ones((4, 3)), monitor=mon)
    phi = np.array(res.trace.column("phi"))
    assert np.all(np.diff(phi) <= 1e-10 * phi[0])
    gaps = res.trace.column("gap")
    assert gaps[-1] < gaps[0]


def test_callback_sees_capped_initial_trial():
    prob = quadratic_problem(3, 2, 4)
    p = LinesearchParams()
    cap = stepsize_cap(prob.mixing, p)
    seen = []
    solve(prob, DistRunConfig(params=p, max_iter=40, tol=0.0), Network(prob.mixing.topology), np.zeros((3, 2)),
          callback=lambda k, ctx, out, t: seen.append((t, out.tau)))
    for t_init, tau in seen:
        assert tau <= t_init <= cap * (1 + 1e-15)
        assert p.beta * tau**2 * (1 - prob.mixing.lambda_min) / 2 <= p.delta_K + 1e-12


# --- baseline ------------------------------------------------------------------

def test_pg_extra_divergence_guard():
    prob = quadratic_problem(3, 2, 0, f=Zero(), lo=5.0, hi=10.0)
    x1 = np.ones((3, 2))
    with pytest.raises(DivergenceError):
        run_pg_extra(prob, 5.0, Network(prob.mixing.topology), x1, max_iter=500, tol=0.0)
    res = run_pg_extra(prob, 5.0, Network(prob.mixing.topology), x1, max_iter=500, tol=0.0, record_divergence=True)
    assert res.trace.status == "diverged" and 0 < len(res.trace) < 500


def test_pg_extra_rejects_nonpositive_sigma():
    prob = quadratic_problem(2, 1, 0)
    with pytest.raises(ValueError):
        next(pg_extra_baseline(prob, np.zeros((2, 1)), 0.0, Network(prob.mixing.topology)))


def test_pg_extra_tallies():
    prob = quadratic_problem(3, 2, 0)
    net = Network(prob.mixing.topology)
    res = run_pg_extra(prob, 0.1, net, np.zeros((3, 2)), max_iter=10, tol=0.0)
    assert len(res.trace) == 10
    assert res.trace.rows[-1].neighbor_rounds == 10
    assert res.trace.rows[-1].prox_grad_rounds == 10
