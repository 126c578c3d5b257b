"""
Application builders: distributed Poisson deblurring and information-matrix
estimation, with synthetic data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributed import DistProblem, relative_errors
from .exceptions import DomainError
from .graph import Topology, metropolis_weights
from .operators import LinearMap, MatrixMap, NonnegIndicator, NonnegL2, SmoothOracle, SpectralBox


# ---------------------------------------------------------------------------
# Poisson regression
# ---------------------------------------------------------------------------

def kl_divergence(z, y):
    """
    ``sum_j y_j log(y_j / z_j) + z_j - y_j`` with ``0 log 0 = 0``.

    Raises
    ------
    DomainError
        If some ``z_j <= 0``.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(z <= 0) or not np.all(np.isfinite(z)):
        raise DomainError("KL divergence needs a strictly positive first argument")
    pos = y > 0
    val = np.sum(z - y)
    # difference of logs: the ratio underflows for subnormal y
    val += np.sum(y[pos] * (np.log(y[pos]) - np.log(z[pos])))
    return float(val)


def gaussian_blur_1d(size, width, shift=0):
    """
    Row-normalised Gaussian blur on ``size`` samples with zero boundary.

    ``width`` is the standard deviation in samples; ``shift`` displaces the
    kernel centre by whole samples.
    """
    idx = np.arange(size)
    B = np.exp(-0.5 * ((idx[None, :] - idx[:, None] - shift) / width) ** 2)
    B /= B.sum(axis=1, keepdims=True)
    return B


class SeparableBlur(LinearMap):
    """
    ``vec(B_r X B_c^T)`` for an ``s_r x s_c`` image stored row-major.
    """

    def __init__(self, B_rows, B_cols):
        self.Br = np.asarray(B_rows, dtype=float)
        self.Bc = np.asarray(B_cols, dtype=float)
        self.shape_in = (self.Br.shape[1], self.Bc.shape[1])
        self.shape_out = (self.Br.shape[0], self.Bc.shape[0])
        self.operator_norm = float(np.linalg.norm(self.Br, 2) * np.linalg.norm(self.Bc, 2))
        self.norm_known = True

    def apply(self, v):
        X = np.asarray(v, dtype=float).reshape(self.shape_in)
        return (self.Br @ X @ self.Bc.T).ravel()

    def adjoint(self, w):
        Y = np.asarray(w, dtype=float).reshape(self.shape_out)
        return (self.Br.T @ Y @ self.Bc).ravel()

    def dense(self):
        return np.kron(self.Br, self.Bc)


class PoissonSmooth(SmoothOracle):
    """``h(x) = KL(A x + b, y)`` for a nonnegative map ``A`` and ``b > 0``."""

    def __init__(self, A, b, y):
        self.A = A
        self.b = np.asarray(b, dtype=float)
        self.y = np.asarray(y, dtype=float)

    def _z(self, x):
        z = self.A.apply(x) + self.b
        if np.any(z <= 0) or not np.all(np.isfinite(z)):
            raise DomainError("A x + b must be strictly positive")
        return z

    def in_domain(self, x):
        z = self.A.apply(x) + self.b
        return bool(np.all(z > 0))

    def value(self, x):
        return kl_divergence(self._z(x), self.y)

    def gradient(self, x):
        z = self._z(x)
        return self.A.adjoint(1.0 - self.y / z)

    def bregman(self, x_new, x_old):
        # y * (r - log(1 + r)) with r = (z_new - z_old) / z_old; no cancellation
        z_old = self._z(x_old)
        z_new = self._z(x_new)
        r = (z_new - z_old) / z_old
        return float(np.sum(self.y * (r - np.log1p(r))))


@dataclass
class PoissonInstance:
    A: list
    b: list
    y: list
    x_true: np.ndarray
    lam: float
    image_shape: tuple | None


def phantom(side):
    """Disc and square on a dim background, values in ``[0.05, 1.0]``."""
    t = (np.arange(side) + 0.5) / side
    R, C = np.meshgrid(t, t, indexing="ij")
    img = np.full((side, side), 0.05)
    img[(R - 0.35) ** 2 + (C - 0.35) ** 2 < 0.2**2] = 1.0
    img[(np.abs(R - 0.7) < 0.15) & (np.abs(C - 0.68) < 0.15)] = 0.6
    return img


def sparse_signal(d, rng):
    x = np.full(d, 0.1)
    k = max(1, d // 5)
    x[rng.choice(d, size=k, replace=False)] += rng.uniform(0.5, 1.5, size=k)
    return x


def blur_widths(n, base=0.4, step=0.35):
    """Blur width per agent, increasing from agent 0 to agent ``n - 1``."""
    return [base + step * i for i in range(n)]


def build_poisson(
    n=4,
    d=32 * 32,
    p=None,
    topology=None,
    noise_seed=0,
    blur_kind="gaussian",
    lam=0.0,
    zero_noise=False,
    background=0.1,
    intensity=10.0,
):
    """
    Synthetic distributed Poisson deblurring instance.

    Parameters
    ----------
    n : int
        Number of agents.
    d : int
        Unknowns; a perfect square gives a ``side x side`` phantom image,
        otherwise a sparse positive vector.
    p : int, optional
        Measurements per agent; only ``p = d`` is supported (one blurred
        copy of the image per agent).
    topology : Topology, optional
        Defaults to a ring.
    noise_seed : int
        Seed for the Poisson counts.
    blur_kind : {"gaussian", "shifted"}
        ``"shifted"`` also offsets each agent's kernel by ``i mod 2`` samples.
    lam : float
        Weight of the ``lam/2 ||x||^2`` term added to every ``f_i``.
    background : float
        Constant positive offset ``b_i``.
    zero_noise : bool
        Use ``y_i = A_i x_true + b_i`` exactly instead of sampling counts.
    intensity : float
        Photon scale; the phantom is multiplied by it before sampling.

    Returns
    -------
    (DistProblem, PoissonInstance)
    """
    if p is not None and p != d:
        raise ValueError("only p = d (one blurred image per agent) is supported")
    if blur_kind not in ("gaussian", "shifted"):
        raise ValueError(f"unknown blur kind {blur_kind!r}")
    rng = np.random.default_rng(noise_seed)
    side = int(round(np.sqrt(d)))
    square = side * side == d
    if square:
        x_true = intensity * phantom(side).ravel()
    else:
        x_true = intensity * sparse_signal(d, np.random.default_rng(noise_seed + 1))
    topology = Topology.ring(n) if topology is None else topology
    if topology.n != n:
        raise ValueError("topology size does not match n")
    mixing = metropolis_weights(topology)
    A, b, y, hs = [], [], [], []
    for i, w in enumerate(blur_widths(n)):
        shift = (i % 2) if blur_kind == "shifted" else 0
        if square:
            B = gaussian_blur_1d(side, w, shift)
            Ai = SeparableBlur(B, B)
        else:
            Ai = MatrixMap(gaussian_blur_1d(d, w, shift))
        bi = np.full(d, background)
        mean = Ai.apply(x_true) + bi
        yi = mean.copy() if zero_noise else rng.poisson(mean).astype(float)
        A.append(Ai)
        b.append(bi)
        y.append(yi)
        hs.append(PoissonSmooth(Ai, bi, yi))
    f = NonnegL2(lam) if lam > 0 else NonnegIndicator()
    prob = DistProblem([f] * n, hs, mixing, d)
    inst = PoissonInstance(A, b, y, x_true, lam, (side, side) if square else None)
    return prob, inst


def poisson_start(inst):
    """
    Per-agent start ``A_i^T y_i`` rescaled so its sum equals the measured mass.
    """
    rows = []
    for Ai, yi in zip(inst.A, inst.y):
        back = np.maximum(Ai.adjoint(yi), 0.0)
        mass = float(np.sum(yi))
        s = float(np.sum(back))
        rows.append(back * (mass / s) if s > 0 else np.full_like(back, mass / back.size))
    return np.stack(rows)


# ---------------------------------------------------------------------------
# information-matrix estimation
# ---------------------------------------------------------------------------

class LogDetSmooth(SmoothOracle):
    """
    ``h(X) = -m (log det X - tr(X Y))`` on symmetric positive definite ``X``.

    ``X`` may be passed flattened (row-major, ``dim * dim`` entries).
    """

    def __init__(self, Y, m, dim):
        self.Y = np.asarray(Y, dtype=float)
        self.m = float(m)
        self.dim = int(dim)

    def _mat(self, v):
        X = np.asarray(v, dtype=float).reshape(self.dim, self.dim)
        return 0.5 * (X + X.T)

    def _chol(self, X):
        try:
            return np.linalg.cholesky(X)
        except np.linalg.LinAlgError as exc:
            raise DomainError("matrix is not positive definite") from exc

    def in_domain(self, v):
        try:
            self._chol(self._mat(v))
        except DomainError:
            return False
        return True

    def value(self, v):
        X = self._mat(v)
        L = self._chol(X)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        return -self.m * (logdet - float(np.sum(X * self.Y)))

    def gradient(self, v):
        v = np.asarray(v, dtype=float)
        X = self._mat(v)
        L = self._chol(X)
        Linv = np.linalg.inv(L)
        Xinv = Linv.T @ Linv
        G = -self.m * (Xinv - self.Y)
        return G.reshape(v.shape)

    def bregman(self, v_new, v_old):
        # m * sum(lam - log(1 + lam)) over eigenvalues of X_old^{-1/2} dX X_old^{-1/2}
        X0 = self._mat(v_old)
        X1 = self._mat(v_new)
        L = self._chol(X0)
        self._chol(X1)
        Linv = np.linalg.inv(L)
        M = Linv @ (X1 - X0) @ Linv.T
        lam = np.linalg.eigvalsh(0.5 * (M + M.T))
        if np.any(lam <= -1.0):
            raise DomainError("matrix is not positive definite")
        return self.m * float(np.sum(lam - np.log1p(lam)))


@dataclass
class CovarianceInstance:
    Y: list
    counts: list
    l: float
    u: float
    Sigma: np.ndarray
    X_true: np.ndarray
    dim: int


def sparse_precision(d, rng, density=0.3, lo=0.7, hi=1.8):
    """
    Random sparse symmetric positive definite matrix with spectrum inside
    ``[lo, hi]``.
    """
    P = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            if rng.random() < density:
                P[i, j] = P[j, i] = rng.uniform(-1.0, 1.0)
    ev = np.linalg.eigvalsh(P)
    spread = ev[-1] - ev[0]
    if spread > 0:
        P *= 0.8 * (hi - lo) / spread
        ev = np.linalg.eigvalsh(P)
    centre = 0.5 * (lo + hi) - 0.5 * (ev[0] + ev[-1])
    return P + centre * np.eye(d)


def build_covariance(n=10, d=5, samples_per_agent=1, topology=None, seed=0, l=0.7, u=1.8, identical=False):
    """
    Synthetic distributed maximum-likelihood information-matrix instance.

    Parameters
    ----------
    n, d : int
        Agents and matrix size.
    samples_per_agent : int
        Number of Gaussian samples held by every agent.
    topology : Topology, optional
        Defaults to a ring.
    seed : int
    l, u : float
        Spectral bounds of the constraint set.
    identical : bool
        Give every agent the same samples (used by symmetry checks).

    Returns
    -------
    (DistProblem, CovarianceInstance)
    """
    if not 0 < l <= u:
        raise ValueError("need 0 < l <= u")
    if n < 1 or d < 1 or samples_per_agent < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    X_true = sparse_precision(d, rng, lo=l, hi=u)
    Sigma = np.linalg.inv(X_true)
    Sigma = 0.5 * (Sigma + Sigma.T)
    Lc = np.linalg.cholesky(Sigma)
    m = samples_per_agent
    if identical:
        S = rng.standard_normal((m, d)) @ Lc.T
        samples = [S] * n
    else:
        samples = [rng.standard_normal((m, d)) @ Lc.T for _ in range(n)]
    Y = [Si.T @ Si / m for Si in samples]
    topology = Topology.ring(n) if topology is None else topology
    if topology.n != n:
        raise ValueError("topology size does not match n")
    mixing = metropolis_weights(topology)
    box = SpectralBox(l, u, d)
    hs = [LogDetSmooth(Yi, m, d) for Yi in Y]
    prob = DistProblem([box] * n, hs, mixing, d * d)
    inst = CovarianceInstance(Y, [m] * n, l, u, Sigma, X_true, d)
    return prob, inst


def covariance_start(inst, n):
    """Every agent starts at the identity matrix (flattened)."""
    return np.tile(np.eye(inst.dim).ravel(), (n, 1))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    delta_x: float
    feasibility: float
    rel_error_mean: float
    rel_error_std: float
    rel_error_per_agent: np.ndarray
    prox_grad_rounds: int


def metrics(x_ref, X1, x_prev, x_next, W, prox_grad_rounds=0):
    """
    Trace-level and per-agent error measures for one step.

    ``delta_x = ||x^{k+1} - x^k|| / ||x^1 - x_ref||`` on stacked arrays,
    ``feasibility = ||(I - W) x^k||`` and the per-agent relative errors
    ``||x_i^{k+1} - x_ref|| / ||x_i^1 - x_ref||`` summarised by mean and
    standard deviation.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    scale = float(np.linalg.norm(X1 - x_ref))
    step = float(np.linalg.norm(x_next - x_prev))
    feas = float(np.linalg.norm(x_prev - W @ x_prev))
    rel = relative_errors(x_next, X1, x_ref)
    return MetricRow(
        step / scale if scale > 0 else step,
        feas,
        float(np.mean(rel)),
        float(np.std(rel)),
        rel,
        prox_grad_rounds,
    )


__all__ = [
    "kl_divergence",
    "PoissonSmooth",
    "SeparableBlur",
    "PoissonInstance",
    "build_poisson",
    "poisson_start",
    "LogDetSmooth",
    "CovarianceInstance",
    "build_covariance",
    "covariance_start",
    "metrics",
    "MetricRow",
]
