"""
Distributed proximal-gradient method with backtracking linesearch.

Agents ``i = 0..n-1`` minimise ``sum_i f_i(x) + h_i(x)`` over a graph.  Each
agent stores a primal copy ``x_i`` and a dual-image variable ``u_i``.  One
outer iteration is

1. ``u^k = u^{k-1} + tau_{k-1}/2 (I - W) x^k``   (one neighbour exchange)
2. ``tau_{k(0)} = min(cap, tau_{k-1} alpha_k)`` with
   ``cap = sqrt(2 delta_K) / sqrt(beta (1 - lambda_min(W)))``
3. a linesearch returning a common ``tau_k`` and
   ``x_i^{k+1} = prox_{beta tau_k f_i}(x_i^k - beta tau_k (u_bar_i + grad h_i(x_i^k)))``
   with ``u_bar_i = u_i^k + (tau_k / tau_{k-1}) (u_i^k - u_i^{k-1})``.

Stacked quantities are arrays of shape ``(n, d)``; row ``i`` belongs to
agent ``i``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DivergenceError,
    DomainError,
    NonFiniteIterateError,
    StepsizeUnderflowError,
)
from .operators import inner
from .saddle import LinesearchParams

KINDS = ("sum", "min", "constant", "sum_W", "min_W")


@dataclass
class DistProblem:
    """
    Per-agent oracles and the mixing matrix.

    Parameters
    ----------
    f : list of ProxOracle
    h : list of SmoothOracle
    mixing : MixingMatrix
    d : int
        Dimension of each agent's variable (flattened).
    """

    f: list
    h: list
    mixing: object
    d: int

    def __post_init__(self):
        if not (len(self.f) == len(self.h) == self.mixing.n):
            raise ValueError(
                f"{len(self.f)} prox oracles, {len(self.h)} smooth oracles, "
                f"W has {self.mixing.n} agents"
            )

    @property
    def n(self):
        return self.mixing.n

    def objective(self, x):
        """``sum_i f_i(x) + h_i(x)`` at a single point ``x``."""
        total = 0.0
        for fi, hi in zip(self.f, self.h):
            total += fi.value(x) + hi.value(x)
        return total

    def stacked_objective(self, X):
        """``sum_i f_i(x_i) + h_i(x_i)`` for a stacked iterate."""
        total = 0.0
        for fi, hi, xi in zip(self.f, self.h, X):
            total += fi.value(xi) + hi.value(xi)
        return total


@dataclass(frozen=True)
class AgentState:
    """Local view of one agent: primal copy, dual image and its predecessor."""

    x: np.ndarray
    u: np.ndarray
    u_prev: np.ndarray


@dataclass
class DistState:
    """
    Stacked iterate entering an outer iteration.

    ``x`` is ``x^k``, ``u`` is ``u^{k-1}`` (``u^0 = 0`` at start) and
    ``tau_prev`` / ``theta_prev`` are ``tau_{k-1}`` / ``theta_{k-1}``.
    """

    x: np.ndarray
    u: np.ndarray
    tau_prev: float
    theta_prev: float = 1.0
    k: int = 1
    u_prev: np.ndarray | None = None

    @classmethod
    def initial(cls, x1, tau0, u0=None):
        x1 = np.array(x1, dtype=float)
        u0 = np.zeros_like(x1) if u0 is None else np.array(u0, dtype=float)
        if abs(float(np.sum(u0))) > 1e-10 * max(1.0, float(np.abs(u0).sum())):
            raise ValueError("initial dual variables must sum to zero across agents")
        return cls(x=x1, u=u0, tau_prev=float(tau0))

    def agent(self, i):
        u_prev = self.u if self.u_prev is None else self.u_prev
        return AgentState(self.x[i], self.u[i], u_prev[i])


@dataclass(frozen=True)
class DistRunConfig:
    """
    Run settings for :func:`solve`.

    ``tau0=None`` picks ``0.1 * cap`` (or ``1.0`` when the cap is infinite).
    ``lipschitz`` maps agent index to a known global Lipschitz constant of
    its gradient; it is only used by ``kind="min"``.
    """

    params: LinesearchParams = field(default_factory=LinesearchParams)
    kind: str = "sum"
    tau0: float | None = None
    max_iter: int = 1000
    tol: float = 1e-3
    lipschitz: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown linesearch kind {self.kind!r}")
        if self.kind == "constant" and self.tau0 is None:
            raise ValueError("constant stepsize needs an explicit tau0")
        if self.tau0 is not None and not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        for i, L in self.lipschitz.items():
            if not L > 0:
                raise ValueError(f"Lipschitz constant for agent {i} must be positive")


def stepsize_cap(mixing, p):
    """``sqrt(2 delta_K) / sqrt(beta (1 - lambda_min(W)))``; infinite when ``W = I``."""
    gap = 1.0 - mixing.lambda_min
    if gap <= 0.0:
        return math.inf
    return math.sqrt(2.0 * p.delta_K) / math.sqrt(p.beta * gap)


def default_tau0(mixing, p):
    cap = stepsize_cap(mixing, p)
    return 1.0 if math.isinf(cap) else 0.1 * cap


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def dual_update(net, x, u, mixing, tau_prev):
    """
    ``u + tau_prev/2 (I - W) x`` using one neighbour exchange.

    Returns the new dual images and ``W x`` (reused for the feasibility
    measure).
    """
    Wx = net.neighbor_mix(x, mixing)
    return u + 0.5 * tau_prev * (x - Wx), Wx


@dataclass
class LSContext:
    """Everything a linesearch needs about the current outer iteration."""

    x: np.ndarray
    u: np.ndarray
    u_prev: np.ndarray
    grad: np.ndarray
    tau_prev: float


@dataclass
class LSOutcome:
    tau: float
    x_next: np.ndarray
    u_bar: np.ndarray
    backtracks: list
    prox_rounds: int
    agent_taus: list | None = None


def trial_prox_step(prob, ctx, i, t, beta):
    """
    Agent ``i``'s extrapolated dual image and primal trial at stepsize ``t``.

    Returns ``(x_trial_i, u_bar_i)``.
    """
    if not t > 0:
        raise ValueError("trial stepsize must be positive")
    u_bar = ctx.u[i] + (t / ctx.tau_prev) * (ctx.u[i] - ctx.u_prev[i])
    bt = beta * t
    x_new = prob.f[i].prox(bt, ctx.x[i] - bt * (u_bar + ctx.grad[i]))
    if not np.all(np.isfinite(x_new)):
        raise NonFiniteIterateError(f"agent {i}: non-finite trial point")
    return x_new, u_bar


def local_excess(prob, ctx, i, t, x_new, thresh):
    """``t * Bregman_i - thresh * ||dx_i||^2``; ``inf`` outside the domain of ``h_i``."""
    dx = x_new - ctx.x[i]
    try:
        breg = prob.h[i].bregman(x_new, ctx.x[i])
    except DomainError:
        return math.inf
    return t * breg - thresh * inner(dx, dx)


def _w_term(dx, Wdx):
    """Per-agent ``||dx_i||^2 - <(W dx)_i, dx_i>``."""
    return np.array([inner(a, a) - inner(b, a) for a, b in zip(dx, Wdx)])


def _all_trials(prob, ctx, net, t, beta, agents=None):
    agents = range(prob.n) if agents is None else agents
    res = net.local(lambda i: trial_prox_step(prob, ctx, i, t, beta), agents)
    for i in agents:
        net.count_prox_grad(i)
    return res


def ls_sum(net, prob, ctx, p, tau_init):
    """
    Common-stepsize backtracking with one global sum per trial.

    Every agent evaluates its trial at the shared stepsize; the trial is
    rejected while the sum of the local excesses is positive.
    """
    thresh = p.delta_L / (2.0 * p.beta)
    t = tau_init
    n = prob.n
    for j in range(p.max_backtracks + 1):
        trials = _all_trials(prob, ctx, net, t, p.beta)
        X = np.stack([tr[0] for tr in trials])
        a = net.local(lambda i: local_excess(prob, ctx, i, t, X[i], thresh))
        total = net.allreduce_sum(a)
        if not total > 0.0 and not math.isnan(total):
            U = np.stack([tr[1] for tr in trials])
            return LSOutcome(t, X, U, [j] * n, j + 1)
        t *= p.mu
    raise StepsizeUnderflowError(f"sum linesearch exceeded {p.max_backtracks} backtracks")


def _agent_backtrack(prob, ctx, i, tau_init, p, thresh):
    t = tau_init
    for j in range(p.max_backtracks + 1):
        x_new, u_bar = trial_prox_step(prob, ctx, i, t, p.beta)
        if not local_excess(prob, ctx, i, t, x_new, thresh) > 0.0:
            return t, x_new, u_bar, j + 1
        t *= p.mu
    raise StepsizeUnderflowError(
        f"agent {i}: local linesearch exceeded {p.max_backtracks} backtracks"
    )


def ls_min(net, prob, ctx, p, tau_init, skip=()):
    """
    Independent local backtracking followed by one global minimum.

    Agents listed in ``skip`` do not backtrack; they propose ``tau_init``.
    Agents whose own stepsize exceeds the minimum recompute their trial at
    the common stepsize; ties reuse the local trial.
    """
    thresh = p.delta_L / (2.0 * p.beta)
    n = prob.n
    skip = set(skip)
    active = [i for i in range(n) if i not in skip]
    results = dict(zip(active, net.local(lambda i: _agent_backtrack(prob, ctx, i, tau_init, p, thresh), active)))
    taus = [tau_init] * n
    X = np.empty_like(ctx.x)
    U = np.empty_like(ctx.u)
    backtracks = [0] * n
    rounds = 0
    for i, (t_i, x_i, ub_i, trials) in results.items():
        taus[i] = t_i
        X[i], U[i] = x_i, ub_i
        backtracks[i] = trials - 1
        net.prox_grad_evals[i] += trials
        rounds = max(rounds, trials)
    tau = net.allreduce_min(taus)
    redo = [i for i in range(n) if i in skip or taus[i] > tau]
    if redo:
        for i, (x_i, ub_i) in zip(redo, _all_trials(prob, ctx, net, tau, p.beta, redo)):
            X[i], U[i] = x_i, ub_i
        rounds += 1
    return LSOutcome(tau, X, U, backtracks, rounds, agent_taus=taus)


def ls_min_lipshortcut(net, prob, ctx, p, tau_init, lip):
    """
    :func:`ls_min` where agents with a known global Lipschitz constant skip
    backtracking.  ``tau_init`` must already be capped by
    ``min_i delta_L / (beta L_i)`` over those agents (see :func:`lipschitz_cap`).
    """
    if not lip:
        raise ValueError("no Lipschitz constants supplied")
    for i, L in lip.items():
        if not L > 0:
            raise ValueError(f"Lipschitz constant for agent {i} must be positive")
    return ls_min(net, prob, ctx, p, tau_init, skip=lip.keys())


def lipschitz_cap(lip, p):
    """``min_i delta_L / (beta L_i)`` over agents with known constants."""
    if not lip:
        return math.inf
    return min(p.delta_L / (p.beta * L) for L in lip.values())


def ls_W_variant(net, prob, ctx, p, tau_init, kind):
    """
    Backtracking that replaces the eigenvalue cap by a coupling term.

    The local excess gains ``t^2/4 (||dx_i||^2 - <(W dx)_i, dx_i>)`` and the
    threshold rises to ``(delta_K + delta_L) / (2 beta)``.  Each trial costs
    one neighbour exchange of the displacements.

    ``kind="sum_W"`` tests the global sum as :func:`ls_sum` does.
    ``kind="min_W"`` runs synchronous local backtracking rounds, takes the
    global minimum, and then verifies the common stepsize: every agent
    re-evaluates its excess at the minimum and proposes either that stepsize
    or one shrink of it; another minimum settles the round.  The coupling
    term depends on the neighbours' trials, so the verification rounds are
    what guarantee the aggregated inequality at acceptance.
    """
    if kind not in ("sum_W", "min_W"):
        raise ValueError(f"unknown W-variant kind {kind!r}")
    thresh = (p.delta_K + p.delta_L) / (2.0 * p.beta)
    n = prob.n
    mix = prob.mixing

    def excesses(X, ts):
        dx = X - ctx.x
        Wdx = net.neighbor_mix(dx, mix)
        w = _w_term(dx, Wdx)
        return [
            0.25 * ts[i] ** 2 * w[i] + local_excess(prob, ctx, i, ts[i], X[i], thresh)
            for i in range(n)
        ]

    if kind == "sum_W":
        t = tau_init
        for j in range(p.max_backtracks + 1):
            trials = _all_trials(prob, ctx, net, t, p.beta)
            X = np.stack([tr[0] for tr in trials])
            total = net.allreduce_sum(excesses(X, [t] * n))
            if not total > 0.0 and not math.isnan(total):
                U = np.stack([tr[1] for tr in trials])
                return LSOutcome(t, X, U, [j] * n, j + 1)
            t *= p.mu
        raise StepsizeUnderflowError(f"sum_W linesearch exceeded {p.max_backtracks} backtracks")

    # min_W: synchronous local rounds
    taus = [tau_init] * n
    done = [False] * n
    backtracks = [0] * n
    X = np.empty_like(ctx.x)
    U = np.empty_like(ctx.u)
    rounds = 0
    while True:
        todo = [i for i in range(n) if not done[i]]
        for i, (x_i, ub_i) in zip(todo, net.local(lambda i: trial_prox_step(prob, ctx, i, taus[i], p.beta), todo)):
            X[i], U[i] = x_i, ub_i
            net.count_prox_grad(i)
        rounds += 1
        b = excesses(X, taus)
        for i in todo:
            if b[i] > 0.0 or math.isnan(b[i]):
                if backtracks[i] >= p.max_backtracks:
                    raise StepsizeUnderflowError(
                        f"agent {i}: min_W linesearch exceeded {p.max_backtracks} backtracks"
                    )
                taus[i] *= p.mu
                backtracks[i] += 1
            else:
                done[i] = True
        if all(done):
            break
    tau = net.allreduce_min(taus)
    agent_taus = list(taus)
    redo = [i for i in range(n) if taus[i] > tau]
    extra = 0
    while True:
        if redo:
            for i, (x_i, ub_i) in zip(redo, _all_trials(prob, ctx, net, tau, p.beta, redo)):
                X[i], U[i] = x_i, ub_i
            rounds += 1
        b = excesses(X, [tau] * n)
        proposal = [tau if not (bi > 0.0 or math.isnan(bi)) else p.mu * tau for bi in b]
        new_tau = net.allreduce_min(proposal)
        if new_tau == tau:
            return LSOutcome(tau, X, U, backtracks, rounds, agent_taus=agent_taus)
        extra += 1
        if extra > p.max_backtracks:
            raise StepsizeUnderflowError("min_W verification exceeded the backtrack budget")
        tau = new_tau
        backtracks = [bt + 1 for bt in backtracks]
        redo = list(range(n))


def constant_step(net, prob, ctx, p, tau):
    trials = _all_trials(prob, ctx, net, tau, p.beta)
    X = np.stack([tr[0] for tr in trials])
    U = np.stack([tr[1] for tr in trials])
    return LSOutcome(tau, X, U, [0] * prob.n, 1)


def ls_slack(prob, ctx, outcome, p, kind="sum"):
    """
    Post-hoc slack of the aggregated descent inequality at acceptance.

    For the plain rules this is
    ``delta_L/(2 beta) sum ||dx_i||^2 - tau sum Bregman_i``; the W rules use
    their enlarged threshold and coupling term.  Nonnegative means the
    inequality holds.
    """
    t = outcome.tau
    X = outcome.x_next
    if kind in ("sum_W", "min_W"):
        thresh = (p.delta_K + p.delta_L) / (2.0 * p.beta)
        dx = X - ctx.x
        w = _w_term(dx, prob.mixing.W @ dx)
        terms = [0.25 * t * t * w[i] + local_excess(prob, ctx, i, t, X[i], thresh) for i in range(prob.n)]
    else:
        thresh = p.delta_L / (2.0 * p.beta)
        terms = [local_excess(prob, ctx, i, t, X[i], thresh) for i in range(prob.n)]
    total = 0.0
    for a in terms:
        total += a
    return -total


# ---------------------------------------------------------------------------
# monitors and traces
# ---------------------------------------------------------------------------

class DistMonitor:
    """
    Sufficient-decrease quantity and ergodic gap for the distributed method.

    Uses the consensus solution ``x_star`` (one row) and dual images
    ``u_hat`` (zero-sum, shape ``(n, d)``).  The dual distance is measured in
    the metric of the pseudo-inverse of ``(I - W)/2``, which equals the
    Euclidean distance of the underlying saddle variables.
    """

    def __init__(self, prob, x_star, u_hat, beta):
        self.prob = prob
        self.beta = beta
        n = prob.n
        self.X_hat = np.tile(np.asarray(x_star, dtype=float), (n, 1))
        self.u_hat = np.asarray(u_hat, dtype=float)
        self._pinv = np.linalg.pinv(0.5 * (np.eye(n) - prob.mixing.W), hermitian=True)
        self._obj_hat = prob.stacked_objective(self.X_hat)
        if not np.isfinite(self._obj_hat):
            raise DomainError("reference solution lies outside the objective domain")
        self._sum_x = None
        self.s = 0.0

    def phi(self, u, x):
        du = u - self.u_hat
        dx = x - self.X_hat
        return 0.5 * inner(du, self._pinv @ du) + inner(dx, dx) / (2.0 * self.beta)

    def record(self, tau, x_next):
        if self._sum_x is None:
            self._sum_x = np.zeros_like(x_next)
        self._sum_x += tau * x_next
        self.s += tau

    def gap(self):
        Xbar = self._sum_x / self.s
        return (
            self.prob.stacked_objective(Xbar) - self._obj_hat + inner(self.u_hat, Xbar - self.X_hat)
        )


TRACE_COLUMNS = (
    "k",
    "prox_grad_rounds",
    "neighbor_rounds",
    "allreduce_sum",
    "allreduce_min",
    "tau",
    "backtracks_per_agent",
    "delta_x",
    "feasibility",
    "rel_error_mean",
    "rel_error_std",
    "phi",
    "gap",
)


def fmt_float(x):
    """17 significant digits; empty for missing values."""
    if x is None:
        return ""
    return format(float(x), ".17g")


@dataclass
class TraceRow:
    k: int
    prox_grad_rounds: int
    neighbor_rounds: int
    allreduce_sum: int
    allreduce_min: int
    tau: float
    backtracks_per_agent: tuple
    delta_x: float
    feasibility: float
    rel_error_mean: float | None = None
    rel_error_std: float | None = None
    phi: float | None = None
    gap: float | None = None

    def as_csv(self):
        return [
            str(self.k),
            str(self.prox_grad_rounds),
            str(self.neighbor_rounds),
            str(self.allreduce_sum),
            str(self.allreduce_min),
            fmt_float(self.tau),
            ";".join(str(b) for b in self.backtracks_per_agent),
            fmt_float(self.delta_x),
            fmt_float(self.feasibility),
            fmt_float(self.rel_error_mean),
            fmt_float(self.rel_error_std),
            fmt_float(self.phi),
            fmt_float(self.gap),
        ]


@dataclass
class SolverTrace:
    rows: list = field(default_factory=list)
    status: str = "max_iter"

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow(r.as_csv())
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def relative_errors(X, X1, x_ref):
    """Per-agent ``||x_i - x_ref|| / ||x_i^1 - x_ref||``."""
    num = np.linalg.norm((X - x_ref).reshape(X.shape[0], -1), axis=1)
    den = np.linalg.norm((X1 - x_ref).reshape(X.shape[0], -1), axis=1)
    den = np.where(den > 0, den, 1.0)
    return num / den


def metric_row(k, net, tau, backtracks, x, x_next, Wx, X1, x_ref=None, phi=None, gap=None, rounds=0):
    """Assemble one trace row from the iterates of outer iteration ``k``."""
    step = float(np.linalg.norm(x_next - x))
    feas = float(np.linalg.norm(x - Wx))
    if x_ref is not None:
        scale = float(np.linalg.norm(X1 - x_ref))
        delta = step / scale if scale > 0 else step
        rel = relative_errors(x_next, X1, x_ref)
        mean, std = float(np.mean(rel)), float(np.std(rel))
    else:
        delta, mean, std = step, None, None
    return TraceRow(
        k=k,
        prox_grad_rounds=rounds,
        neighbor_rounds=net.neighbor_rounds,
        allreduce_sum=net.allreduce_sum_calls,
        allreduce_min=net.allreduce_min_calls,
        tau=tau,
        backtracks_per_agent=tuple(backtracks),
        delta_x=delta,
        feasibility=feas,
        rel_error_mean=mean,
        rel_error_std=std,
        phi=phi,
        gap=gap,
    ), step, feas


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

@dataclass
class DistResult:
    x: np.ndarray
    trace: SolverTrace
    state: DistState


def initial_trial(prob, cfg, tau_prev, theta_prev):
    p = cfg.params
    grown = tau_prev * p.alpha(theta_prev)
    if cfg.kind in ("sum_W", "min_W"):
        return grown
    t = min(stepsize_cap(prob.mixing, p), grown)
    if cfg.kind == "min" and cfg.lipschitz:
        t = min(t, lipschitz_cap(cfg.lipschitz, p))
    return t


def solve(prob, cfg, net, x1, x_ref=None, monitor=None, callback=None, u0=None):
    """
    Run the distributed method from the stacked start ``x1``.

    Parameters
    ----------
    prob : DistProblem
    cfg : DistRunConfig
    net : Network
    x1 : ndarray, shape (n, d)
    x_ref : ndarray, optional
        Reference point for the relative-error columns.
    monitor : DistMonitor, optional
        Adds the sufficient-decrease and ergodic-gap columns.
    callback : callable, optional
        ``callback(k, ctx, outcome, tau_init)`` after every linesearch.

    Returns
    -------
    DistResult
    """
    p = cfg.params
    tau0 = cfg.tau0 if cfg.tau0 is not None else default_tau0(prob.mixing, p)
    st = DistState.initial(x1, tau0, u0)
    X1 = st.x.copy()
    trace = SolverTrace()
    rounds = 0
    for k in range(1, cfg.max_iter + 1):
        u_new, Wx = dual_update(net, st.x, st.u, prob.mixing, st.tau_prev)
        phi = monitor.phi(u_new, st.x) if monitor is not None else None
        grad = np.stack(net.local(lambda i: prob.h[i].gradient(st.x[i])))
        ctx = LSContext(st.x, u_new, st.u, grad, st.tau_prev)
        if cfg.kind == "constant":
            tau_init = tau0
            out = constant_step(net, prob, ctx, p, tau0)
        else:
            tau_init = initial_trial(prob, cfg, st.tau_prev, st.theta_prev)
            if cfg.kind == "sum":
                out = ls_sum(net, prob, ctx, p, tau_init)
            elif cfg.kind == "min":
                if cfg.lipschitz:
                    out = ls_min_lipshortcut(net, prob, ctx, p, tau_init, cfg.lipschitz)
                else:
                    out = ls_min(net, prob, ctx, p, tau_init)
            else:
                out = ls_W_variant(net, prob, ctx, p, tau_init, cfg.kind)
        if callback is not None:
            callback(k, ctx, out, tau_init)
        rounds += out.prox_rounds
        gap = None
        if monitor is not None:
            monitor.record(out.tau, out.x_next)
            gap = monitor.gap()
        row, step, feas = metric_row(
            k, net, out.tau, out.backtracks, st.x, out.x_next, Wx, X1, x_ref, phi, gap, rounds
        )
        trace.rows.append(row)
        st = DistState(
            x=out.x_next,
            u=u_new,
            tau_prev=out.tau,
            theta_prev=out.tau / st.tau_prev,
            k=k + 1,
            u_prev=st.u,
        )
        if max(step, feas) < cfg.tol:
            trace.status = "converged"
            break
    return DistResult(st.x, trace, st)


def pg_extra_baseline(prob, x1, sigma, net, max_iter=None, guard=1e12):
    """
    Classical constant-step PG-EXTRA.

    Yields ``(x^k, x^{k+1}, W x^k)`` for ``k = 1, 2, ...``; starts with
    ``x^2 = prox_{sigma f}(W x^1 - sigma grad h(x^1))``.  Raises
    :class:`DivergenceError` once ``||x|| > guard``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    mix = prob.mixing
    n = prob.n

    def grad(X):
        return np.stack(net.local(lambda i: prob.h[i].gradient(X[i])))

    def prox(Wt):
        out = np.stack(net.local(lambda i: prob.f[i].prox(sigma, Wt[i])))
        for i in range(n):
            net.count_prox_grad(i)
        return out

    x = np.array(x1, dtype=float)
    Wx = net.neighbor_mix(x, mix)
    g = grad(x)
    w = Wx - sigma * g
    k = 1
    while max_iter is None or k <= max_iter:
        x_next = prox(w)
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > guard:
            raise DivergenceError(f"PG-EXTRA diverged at iteration {k} (sigma={sigma})")
        yield x, x_next, Wx
        k += 1
        Wx_next = net.neighbor_mix(x_next, mix)
        g_next = grad(x_next)
        w = w + Wx_next - 0.5 * (Wx + x) - sigma * (g_next - g)
        x, Wx, g = x_next, Wx_next, g_next


def run_pg_extra(prob, sigma, net, x1, max_iter=1000, tol=1e-3, x_ref=None, record_divergence=False):
    """
    Drive :func:`pg_extra_baseline` and record a trace with the same columns.

    With ``record_divergence`` a blow-up ends the run with status
    ``"diverged"`` instead of raising; the trace keeps the rows before it.
    """
    X1 = np.array(x1, dtype=float)
    trace = SolverTrace()
    rounds = 0
    x_last = X1
    try:
        for k, (x, x_next, Wx) in enumerate(pg_extra_baseline(prob, X1, sigma, net, max_iter), start=1):
            rounds += 1
            row, step, feas = metric_row(k, net, sigma, [0] * prob.n, x, x_next, Wx, X1, x_ref, rounds=rounds)
            trace.rows.append(row)
            x_last = x_next
            if max(step, feas) < tol:
                trace.status = "converged"
                break
    except DivergenceError:
        if not record_divergence:
            raise
        trace.status = "diverged"
    return DistResult(x_last, trace, None)
