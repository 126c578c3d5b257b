"""Shared builders and independent oracles for the test-suite."""

from __future__ import annotations

import numpy as np

from distls.distributed import DistProblem
from distls.graph import Topology, metropolis_weights
from distls.operators import (
    MatrixMap,
    NonnegIndicator,
    Quadratic,
    Stacked,
    StackedSmooth,
    Zero,
)
from distls.saddle import LinesearchParams, SaddleProblem

POISSON_PARAMS = LinesearchParams(beta=2.0, delta_L=0.5, delta_K=0.9999 - 0.5, mu=0.95, gamma=0.99)
COVARIANCE_PARAMS = LinesearchParams(beta=1.0, delta_L=0.5, delta_K=0.9999 - 0.5, mu=0.95, gamma=0.99)


def random_spd(d, rng, lo=0.2, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(lo, hi, size=d)) @ Q.T


def quadratic_problem(n, d, seed, f=None, topology=None, lo=0.2, hi=3.0):
    """Agents with random strongly convex quadratics and a shared prox term."""
    rng = np.random.default_rng(seed)
    hs = [Quadratic(random_spd(d, rng, lo, hi), rng.standard_normal(d)) for _ in range(n)]
    topo = Topology.ring(n) if topology is None else topology
    f = NonnegIndicator() if f is None else f
    return DistProblem([f] * n, hs, metropolis_weights(topo), d)


def dense_consensus_root(W):
    """``((I - W)/2)^{1/2}`` by symmetric eigendecomposition."""
    n = W.shape[0]
    lam, Q = np.linalg.eigh(0.5 * (np.eye(n) - W))
    return (Q * np.sqrt(np.clip(lam, 0.0, None))) @ Q.T


def stacked_saddle(prob):
    """Saddle problem whose primal-dual iterates reproduce the distributed method."""
    U = dense_consensus_root(prob.mixing.W)
    K = MatrixMap(-U)
    return SaddleProblem(G=Zero(), F=Stacked(prob.f), H=StackedSmooth(prob.h), K=K), U


def quadratic_consensus_minimizer(prob):
    """Unconstrained minimiser of ``sum_i 1/2 x'Q_i x + q_i'x``."""
    Q = sum(h.Q for h in prob.h)
    q = sum(h.q for h in prob.h)
    return np.linalg.solve(Q, -q)


def nonneg_qp_bruteforce(Q, q):
    """
    ``argmin_{x >= 0} 1/2 x'Qx + q'x`` by enumerating active sets (small d).

    For each support ``S`` solve the reduced normal equations and keep the
    KKT-feasible candidate.
    """
    d = len(q)
    best = None
    for mask in range(1 << d):
        S = [j for j in range(d) if mask >> j & 1]
        x = np.zeros(d)
        if S:
            x[S] = np.linalg.solve(Q[np.ix_(S, S)], -q[S])
        g = Q @ x + q
        off = [j for j in range(d) if j not in S]
        if np.all(x[S] >= -1e-12) and np.all(g[off] >= -1e-10):
            val = 0.5 * x @ Q @ x + q @ x
            if best is None or val < best[0]:
                best = (val, x)
    return best[1]
