"""
Centralized primal-dual splitting with a pluggable backtracking linesearch.

Solves ``min_u max_v <K u, v> + G(u) - F(v) - H(v)`` where ``G`` and ``F``
are proximable and ``H`` is smooth with a locally Lipschitz gradient.

Iteration ``k`` takes ``(u^{k-1}, v^k, tau_{k-1}, theta_{k-1})`` and produces

* ``u^k = prox_{tau_{k-1} G}(u^{k-1} - tau_{k-1} K* v^k)``,
* a trial stepsize ``tau_{k(0)}`` (grown by ``alpha_k`` and capped by the
  norm of ``K``),
* ``(tau_k, v^{k+1})`` from the linesearch, using the extrapolated point
  ``u_bar = u^k + (tau_k / tau_{k-1}) (u^k - u^{k-1})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DomainError, NonFiniteIterateError, StepsizeUnderflowError
from .operators import inner


@dataclass(frozen=True)
class LinesearchParams:
    """
    Parameters shared by all stepsize rules.

    Attributes
    ----------
    beta : float
        Ratio between the dual and primal stepsizes.
    delta_L, delta_K : float
        Fractions of the stepsize budget granted to the smooth term and to the
        coupling operator; their sum must stay below one.
    mu : float
        Backtracking shrink factor.
    gamma : float
        Caps the per-iteration growth at ``sqrt(1 + gamma * theta)``.
    tau0 : float
        Initial stepsize ``tau_0``.
    alpha_rule : {"max", "one"}
        ``"max"`` grows by the largest admissible factor, ``"one"`` never grows.
    max_backtracks : int
        Trials beyond this many shrinks raise :class:`StepsizeUnderflowError`.
    """

    beta: float = 1.0
    delta_L: float = 0.5
    delta_K: float = 0.4999
    mu: float = 0.95
    gamma: float = 0.99
    tau0: float = 1.0
    alpha_rule: str = "max"
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("delta_L", "delta_K", "mu", "gamma"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        if not self.delta_K + self.delta_L < 1.0:
            raise ValueError("delta_K + delta_L must be below 1")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if self.alpha_rule not in ("max", "one"):
            raise ValueError(f"unknown alpha_rule {self.alpha_rule!r}")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be nonnegative")

    def alpha(self, theta_prev):
        if self.alpha_rule == "one":
            return 1.0
        return math.sqrt(1.0 + self.gamma * theta_prev)

    def tau_cap(self, knorm):
        """Largest stepsize with ``beta * tau^2 * knorm^2 <= delta_K``."""
        if knorm == 0.0:
            return math.inf
        return math.sqrt(self.delta_K) / (math.sqrt(self.beta) * knorm)


@dataclass(frozen=True)
class SaddleProblem:
    G: object
    F: object
    H: object
    K: object

    def Kstar(self, v):
        return self.K.adjoint(v)


@dataclass(frozen=True)
class PDState:
    """
    Iterate of the primal-dual method after ``k`` completed iterations.

    ``u`` is ``u^k``, ``v`` is ``v^{k+1}``, ``tau_prev`` and ``theta_prev`` are
    ``tau_k`` and ``theta_k``.  ``u_prev`` and ``v_prev`` hold ``u^{k-1}`` and
    ``v^k``; ``tau_old``/``theta_old`` hold ``tau_{k-1}``/``theta_{k-1}``.
    The remaining fields describe the last linesearch call.
    """

    u: np.ndarray
    v: np.ndarray
    tau_prev: float
    theta_prev: float = 1.0
    k: int = 0
    u_prev: np.ndarray | None = None
    v_prev: np.ndarray | None = None
    tau_old: float | None = None
    theta_old: float | None = None
    tau_init: float | None = None
    backtracks: int = 0
    u_bar: np.ndarray | None = None

    @classmethod
    def initial(cls, u0, v1, tau0):
        return cls(u=np.array(u0, dtype=float), v=np.array(v1, dtype=float), tau_prev=float(tau0))


@dataclass
class LSResult:
    tau: float
    v_next: np.ndarray
    u_bar: np.ndarray
    backtracks: int


def ls_descent_test(p, H, v_old, v_new, t):
    """True when the trial must be rejected (the Bregman test fails)."""
    if t <= 0:
        raise ValueError("stepsize must be positive")
    dv = v_new - v_old
    return t * H.bregman(v_new, v_old) > p.delta_L / (2.0 * p.beta) * inner(dv, dv)


def _trial(prob, st, p, t, grad_H):
    """Extrapolated primal point and dual trial at stepsize ``t``."""
    theta = t / st.tau_prev
    u_bar = st.u + theta * (st.u - st.u_prev)
    bt = p.beta * t
    v_new = prob.F.prox(bt, st.v + bt * (prob.K.apply(u_bar) - grad_H))
    return u_bar, v_new


def _backtrack(prob, st, p, tau_init, reject):
    grad_H = prob.H.gradient(st.v)
    t = tau_init
    for j in range(p.max_backtracks + 1):
        u_bar, v_new = _trial(prob, st, p, t, grad_H)
        if not np.all(np.isfinite(v_new)):
            raise NonFiniteIterateError(f"non-finite dual trial at stepsize {t}")
        try:
            bad = reject(v_new, t)
        except DomainError:
            bad = True
        if not bad:
            return LSResult(t, v_new, u_bar, j)
        t *= p.mu
    raise StepsizeUnderflowError(
        f"linesearch still rejecting after {p.max_backtracks} backtracks (tau={t / p.mu:.3e})"
    )


def ls_backtrack(prob, st, p, tau_init):
    """
    Backtracking on the Bregman test of the smooth term alone.

    ``st`` carries ``u = u^k``, ``u_prev = u^{k-1}``, ``v = v^k`` and
    ``tau_prev = tau_{k-1}``.  Each trial recomputes the extrapolation at the
    trial stepsize.
    """

    def reject(v_new, t):
        return ls_descent_test(p, prob.H, st.v, v_new, t)

    return _backtrack(prob, st, p, tau_init, reject)


def ls_backtrack_normfree(prob, st, p, tau_init):
    """
    Backtracking that does not need ``||K||``.

    The test adds ``t^2/2 ||K*(v_new - v)||^2`` on the left and raises the
    threshold to ``(delta_K + delta_L) / (2 beta)``.
    """
    thresh = (p.delta_K + p.delta_L) / (2.0 * p.beta)

    def reject(v_new, t):
        dv = v_new - st.v
        kd = prob.Kstar(dv)
        lhs = 0.5 * t * t * inner(kd, kd) + t * prob.H.bregman(v_new, st.v)
        return lhs > thresh * inner(dv, dv)

    return _backtrack(prob, st, p, tau_init, reject)


class Backtrack:
    """Standard backtracking; the trial stepsize is capped by the norm of ``K``."""

    uses_norm = True

    def __call__(self, prob, st, p, tau_init):
        return ls_backtrack(prob, st, p, tau_init)


class NormFreeBacktrack:
    """Backtracking with the coupling term folded into the test."""

    uses_norm = False

    def __call__(self, prob, st, p, tau_init):
        return ls_backtrack_normfree(prob, st, p, tau_init)


def initial_trial_stepsize(prob, st, p, ls):
    """``min(cap, tau_{k-1} alpha_k)``, or the uncapped growth for norm-free rules."""
    grown = st.tau_prev * p.alpha(st.theta_prev)
    if not ls.uses_norm:
        return grown
    if not prob.K.norm_known:
        raise ValueError("a norm-capped linesearch needs a linear map with known norm")
    return min(p.tau_cap(prob.K.operator_norm), grown)


def pd_step(prob, st, p, ls=None):
    """Advance one iteration; returns the new :class:`PDState`."""
    ls = Backtrack() if ls is None else ls
    tau_prev = st.tau_prev
    u_new = prob.G.prox(tau_prev, st.u - tau_prev * prob.Kstar(st.v))
    if not np.all(np.isfinite(u_new)):
        raise NonFiniteIterateError("non-finite primal iterate")
    mid = replace(st, u=u_new, u_prev=st.u)
    tau_init = initial_trial_stepsize(prob, st, p, ls)
    res = ls(prob, mid, p, tau_init)
    return PDState(
        u=u_new,
        v=res.v_next,
        tau_prev=res.tau,
        theta_prev=res.tau / tau_prev,
        k=st.k + 1,
        u_prev=st.u,
        v_prev=st.v,
        tau_old=tau_prev,
        theta_old=st.theta_prev,
        tau_init=tau_init,
        backtracks=res.backtracks,
        u_bar=res.u_bar,
    )


class GapMonitor:
    """
    Lyapunov and gap bookkeeping relative to a reference saddle point.

    Parameters
    ----------
    prob : SaddleProblem
    u_hat, v_hat : ndarray
        A saddle point, typically from :mod:`distls.reference`.
    """

    def __init__(self, prob, u_hat, v_hat):
        self.prob = prob
        self.u_hat = np.asarray(u_hat, dtype=float)
        self.v_hat = np.asarray(v_hat, dtype=float)
        self._G_hat = prob.G.value(self.u_hat)
        self._FH_hat = prob.F.value(self.v_hat) + prob.H.value(self.v_hat)
        if not (np.isfinite(self._G_hat) and np.isfinite(self._FH_hat)):
            raise DomainError("reference point lies outside the domain of G or F + H")
        self._Kstar_vhat = prob.Kstar(self.v_hat)
        self._K_uhat = prob.K.apply(self.u_hat)
        self._tau_theta_1 = None
        self._u0 = None
        self._sum_u = None
        self._sum_v = None
        self.s = 0.0

    def primal_gap(self, u):
        return self.prob.G.value(u) - self._G_hat + inner(self._Kstar_vhat, u - self.u_hat)

    def dual_gap(self, v):
        fh = self.prob.F.value(v) + self.prob.H.value(v)
        return fh - self._FH_hat - inner(self._K_uhat, v - self.v_hat)

    def gap(self, u, v):
        return self.primal_gap(u) + self.dual_gap(v)

    def phi(self, st, p):
        """
        Sufficient-decrease quantity for the pair ``(u^k, v^k)`` of a state
        returned by :func:`pd_step`.
        """
        du = st.u - self.u_hat
        dv = st.v_prev - self.v_hat
        val = 0.5 * inner(du, du) + inner(dv, dv) / (2.0 * p.beta)
        if st.tau_old is not None:
            val += st.tau_old * (1.0 + st.theta_old) * self.primal_gap(st.u_prev)
        return val

    def record(self, st):
        """Accumulate the stepsize-weighted ergodic sums after one step."""
        if self._sum_u is None:
            self._u0 = st.u_prev.copy()
            self._tau_theta_1 = st.tau_prev * st.theta_prev
            self._sum_u = np.zeros_like(st.u_bar)
            self._sum_v = np.zeros_like(st.v)
        self._sum_u += st.tau_prev * st.u_bar
        self._sum_v += st.tau_prev * st.v
        self.s += st.tau_prev

    def ergodic_averages(self):
        """Return ``(U, V, gap)`` for the averages over all recorded steps."""
        if self._sum_u is None:
            raise ValueError("no iterations recorded")
        w0 = self._tau_theta_1
        U = (w0 * self._u0 + self._sum_u) / (w0 + self.s)
        V = self._sum_v / self.s
        return U, V, self.gap(U, V)

    def ergodic_bound(self, first, p):
        """Right-hand side of the ergodic gap bound given the first step's state."""
        du = first.u - self.u_hat
        dv = first.v_prev - self.v_hat
        num = (
            first.tau_prev * first.theta_prev * self.primal_gap(first.u_prev)
            + 0.5 * inner(du, du)
            + inner(dv, dv) / (2.0 * p.beta)
        )
        return num / self.s


@dataclass
class SaddleResult:
    state: PDState
    history: list = field(default_factory=list)
    phis: list = field(default_factory=list)
    gaps: list = field(default_factory=list)


def solve_saddle(prob, u0, v1, p, ls=None, max_iter=1000, tol=0.0, monitor=None, keep_history=False):
    """
    Run the primal-dual method from ``(u^0, v^1)``.

    Stops after ``max_iter`` steps or once ``||v^{k+1} - v^k|| + ||u^k - u^{k-1}||``
    falls below ``tol``.
    """
    st = PDState.initial(u0, v1, p.tau0)
    out = SaddleResult(st)
    for _ in range(max_iter):
        st = pd_step(prob, st, p, ls)
        if keep_history:
            out.history.append(st)
        if monitor is not None:
            out.phis.append(monitor.phi(st, p))
            monitor.record(st)
            out.gaps.append(monitor.ergodic_averages()[2])
        if np.linalg.norm(st.v - st.v_prev) + np.linalg.norm(st.u - st.u_prev) < tol:
            break
    out.state = st
    return out
