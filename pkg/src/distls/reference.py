"""
Independent reference solvers and checkers.

These run centrally on the aggregated problem and are used to certify the
distributed solvers, never by them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import CertificateError, DomainError, SolverError
from .operators import Scaled, SmoothOracle, inner


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    objective: float
    method: str
    residual: float
    iterations: int


class SumSmooth(SmoothOracle):
    """``sum_i h_i`` at a single point."""

    def __init__(self, parts):
        self.parts = list(parts)

    def value(self, x):
        total = 0.0
        for h in self.parts:
            total += h.value(x)
        return total

    def gradient(self, x):
        g = np.zeros_like(np.asarray(x, dtype=float))
        for h in self.parts:
            g = g + h.gradient(x)
        return g

    def bregman(self, x_new, x_old):
        total = 0.0
        for h in self.parts:
            total += h.bregman(x_new, x_old)
        return total


def _same_oracle(a, b):
    if a is b:
        return True
    if type(a) is not type(b):
        return False
    da, db = vars(a), vars(b)
    if da.keys() != db.keys():
        return False
    return all(np.array_equal(np.asarray(da[k]), np.asarray(db[k])) for k in da)


def aggregate(prob):
    """
    ``(n f, sum_i h_i)`` for a problem whose agents share one prox oracle.

    Raises
    ------
    ValueError
        If the agents' nonsmooth terms differ.
    """
    f0 = prob.f[0]
    if not all(_same_oracle(f0, fi) for fi in prob.f[1:]):
        raise ValueError("reference solver needs all agents to share the same nonsmooth term")
    return Scaled(f0, prob.n), SumSmooth(prob.h)


def _prox_grad_step(F, H, x, g, t):
    return F.prox(t, x - t * g)


def _accept(H, x_new, x, t):
    try:
        breg = H.bregman(x_new, x)
    except DomainError:
        return False
    dx = x_new - x
    return breg <= inner(dx, dx) / (2.0 * t) and np.isfinite(breg)


def centralized_solve(prob, x0, tol=1e-10, method="fista", max_iter=200000, t0=1.0):
    """
    Minimise ``sum_i f_i(x) + h_i(x)`` centrally.

    Proximal gradient with backtracking on the descent condition of
    ``sum_i h_i``; ``method="fista"`` adds momentum with gradient-based
    restart.  Stops when the relative fixed-point residual
    ``||x - prox_{t F}(x - t grad H(x))|| / max(1, ||x||)`` drops below ``tol``.

    Parameters
    ----------
    prob : DistProblem
    x0 : ndarray
        Start point, inside the domain of every ``h_i``.
    tol : float
    method : {"pg", "fista"}
    max_iter : int
    t0 : float
        First trial stepsize.

    Raises
    ------
    SolverError
        If the residual is still above ``tol`` after ``max_iter`` steps.
    """
    if method not in ("pg", "fista"):
        raise ValueError(f"unknown method {method!r}")
    F, H = aggregate(prob)
    x = F.prox(1.0, np.array(x0, dtype=float))
    y = x.copy()
    s = 1.0
    t = float(t0)
    res = np.inf
    for it in range(1, max_iter + 1):
        g = H.gradient(y)
        for _ in range(200):
            x_new = _prox_grad_step(F, H, y, g, t)
            if _accept(H, x_new, y, t):
                break
            t *= 0.5
        else:
            raise SolverError("reference backtracking failed to find a descent step")
        if method == "fista":
            if inner(y - x_new, x_new - x) > 0:
                # momentum points uphill: restart
                s = 1.0
                y = x.copy()
                continue
            s_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * s * s))
            y = x_new + ((s - 1.0) / s_new) * (x_new - x)
            try:
                H.value(y)
            except DomainError:
                y = x_new.copy()
                s_new = 1.0
            s = s_new
        else:
            y = x_new
        x = x_new
        # residual at the current point with the current stepsize
        xr = _prox_grad_step(F, H, x, H.gradient(x), t)
        res = float(np.linalg.norm(xr - x)) / max(1.0, float(np.linalg.norm(x)))
        if res < tol:
            return ReferenceSolution(x, prob.objective(x), method, res, it)
        t *= 1.2
    raise SolverError(f"reference solver stopped at residual {res:.3e} > {tol:.1e}")


def dual_certificate(prob, x_star, tol=1e-7):
    """
    Dual images ``u_hat`` certifying ``x_star`` as the consensus optimum.

    ``u_hat_i = mean_j grad h_j(x*) - grad h_i(x*)`` sums to zero across
    agents, and ``-u_hat_i - grad h_i(x*) = -mean_j grad h_j(x*)`` must be a
    subgradient of the shared nonsmooth term at ``x*``; membership is checked
    through the prox fixed-point identity.

    Returns
    -------
    (u_hat, residual)

    Raises
    ------
    CertificateError
        If the membership residual exceeds ``tol``.
    """
    aggregate(prob)
    x_star = np.asarray(x_star, dtype=float)
    G = np.stack([h.gradient(x_star) for h in prob.h])
    gbar = G.mean(axis=0)
    u_hat = gbar[None, :] - G
    s = -gbar
    f = prob.f[0]
    t = 1.0 / max(1.0, float(np.linalg.norm(s)))
    resid = float(np.linalg.norm(f.prox(t, x_star + t * s) - x_star)) / max(1.0, float(np.linalg.norm(x_star)))
    if resid > tol:
        raise CertificateError(f"subgradient membership residual {resid:.3e} exceeds {tol:.1e}")
    return u_hat, resid


def fd_gradient(h, x, step=None):
    """
    Central finite-difference gradient of ``h.value`` at ``x``.

    The default step is ``1e-6 * (1 + ||x||)``.  If a perturbed point leaves
    the domain the step is shrunk once by a factor 100; a second failure
    raises :class:`DomainError`.
    """
    x = np.asarray(x, dtype=float)
    if step is None:
        step = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    if not step > 0:
        raise ValueError("step must be positive")
    flat = x.ravel()
    g = np.empty(flat.size)
    for shrink in (False, True):
        h_step = step * (1e-2 if shrink else 1.0)
        try:
            for j in range(flat.size):
                e = np.zeros_like(flat)
                e[j] = h_step
                fp = h.value((flat + e).reshape(x.shape))
                fm = h.value((flat - e).reshape(x.shape))
                g[j] = (fp - fm) / (2.0 * h_step)
            return g.reshape(x.shape)
        except DomainError:
            if shrink:
                raise
    raise AssertionError("unreachable")
