"""
Oracle interfaces and a small library of proximable functions, smooth
functions and linear maps.

Vectors are numpy arrays of any shape; inner products are the Frobenius
(sum of elementwise products) pairing.  All oracles are pure: no call
mutates its inputs or any state held by the oracle.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError


def inner(a, b):
    """Frobenius inner product of two arrays of equal shape."""
    return float(np.vdot(a, b))


# ---------------------------------------------------------------------------
# closed-form proximal maps
# ---------------------------------------------------------------------------

def prox_nonneg(t, v):
    """Projection onto the nonnegative orthant (the stepsize is irrelevant)."""
    if t <= 0:
        raise ValueError("stepsize must be positive")
    return np.maximum(v, 0.0)


def prox_nonneg_l2(t, lam, v):
    """
    Prox of ``iota_{>=0} + (lam/2)||.||^2`` with stepsize ``t``.

    The minimiser of ``lam/2 ||y||^2 + ||y - v||^2 / (2t)`` over ``y >= 0`` is
    ``max(0, v / (1 + lam*t))`` componentwise; ``t`` is the full effective
    stepsize seen by the caller.
    """
    if t <= 0:
        raise ValueError("stepsize must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return np.maximum(v / (1.0 + lam * t), 0.0)


def proj_spectral_box(l, u, X):
    """
    Frobenius projection of a symmetric matrix onto ``{X : l I <= X <= u I}``.

    The input is symmetrised first, then its eigenvalues are clamped to
    ``[l, u]``.
    """
    if not 0 < l <= u:
        raise ValueError(f"need 0 < l <= u, got l={l}, u={u}")
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DomainError("matrix has non-finite entries")
    S = 0.5 * (X + X.T)
    lam, Q = np.linalg.eigh(S)
    R = (Q * np.clip(lam, l, u)) @ Q.T
    return 0.5 * (R + R.T)


# ---------------------------------------------------------------------------
# proximable functions
# ---------------------------------------------------------------------------

class ProxOracle:
    """
    A proper lsc convex function accessed through its proximity operator.

    Subclasses implement ``prox(t, v)``, the minimiser of
    ``f(y) + ||y - v||^2 / (2t)``, and optionally ``value(v)``.
    """

    def prox(self, t, v):
        raise NotImplementedError

    def value(self, v):
        raise NotImplementedError(f"{type(self).__name__} has no value oracle")


class Zero(ProxOracle):
    def prox(self, t, v):
        return np.array(v, dtype=float, copy=True)

    def value(self, v):
        return 0.0


class NonnegIndicator(ProxOracle):
    """Indicator of the nonnegative orthant."""

    def __init__(self, tol=1e-10):
        self.tol = tol

    def prox(self, t, v):
        return prox_nonneg(t, v)

    def value(self, v):
        return 0.0 if np.min(v, initial=0.0) >= -self.tol else np.inf


class NonnegL2(ProxOracle):
    """``iota_{>=0}(x) + lam/2 ||x||^2``."""

    def __init__(self, lam, tol=1e-10):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.tol = tol

    def prox(self, t, v):
        return prox_nonneg_l2(t, self.lam, v)

    def value(self, v):
        if np.min(v, initial=0.0) < -self.tol:
            return np.inf
        return 0.5 * self.lam * inner(v, v)


class SpectralBox(ProxOracle):
    """
    Indicator of ``{X symmetric : l I <= X <= u I}`` for ``dim x dim`` matrices.

    Accepts either the matrix or its row-major flattening; the output has
    the shape of the input.
    """

    def __init__(self, l, u, dim, tol=1e-10):
        if not 0 < l <= u:
            raise ValueError(f"need 0 < l <= u, got l={l}, u={u}")
        self.l, self.u, self.dim, self.tol = float(l), float(u), int(dim), tol

    def prox(self, t, v):
        v = np.asarray(v, dtype=float)
        X = proj_spectral_box(self.l, self.u, v.reshape(self.dim, self.dim))
        return X.reshape(v.shape)

    def value(self, v):
        X = np.asarray(v, dtype=float).reshape(self.dim, self.dim)
        if not np.array_equal(X, X.T) and np.max(np.abs(X - X.T)) > self.tol:
            return np.inf
        lam = np.linalg.eigvalsh(0.5 * (X + X.T))
        if lam[0] < self.l - self.tol or lam[-1] > self.u + self.tol:
            return np.inf
        return 0.0


class Scaled(ProxOracle):
    """``c * f`` for ``c > 0``; its prox is the prox of ``f`` at stepsize ``c*t``."""

    def __init__(self, base, c):
        if c <= 0:
            raise ValueError("scale must be positive")
        self.base, self.c = base, float(c)

    def prox(self, t, v):
        return self.base.prox(self.c * t, v)

    def value(self, v):
        return self.c * self.base.value(v)


class Stacked(ProxOracle):
    """Separable sum ``f(x) = sum_i f_i(x_i)`` over the rows of a stacked array."""

    def __init__(self, parts):
        self.parts = list(parts)

    def prox(self, t, v):
        return np.stack([f.prox(t, vi) for f, vi in zip(self.parts, v)])

    def value(self, v):
        total = 0.0
        for f, vi in zip(self.parts, v):
            total += f.value(vi)
        return total


# ---------------------------------------------------------------------------
# smooth functions
# ---------------------------------------------------------------------------

class SmoothOracle:
    """A differentiable convex function with locally Lipschitz gradient."""

    def value(self, v):
        raise NotImplementedError

    def gradient(self, v):
        raise NotImplementedError

    def in_domain(self, v):
        return True

    def bregman(self, v_new, v_old):
        """First-order approximation error ``h(v_new) - h(v_old) - <grad h(v_old), v_new - v_old>``."""
        return self.value(v_new) - self.value(v_old) - inner(self.gradient(v_old), v_new - v_old)


class ZeroSmooth(SmoothOracle):
    def value(self, v):
        return 0.0

    def bregman(self, v_new, v_old):
        return 0.0

    def gradient(self, v):
        return np.zeros_like(v, dtype=float)


class Linear(SmoothOracle):
    """``<q, v> + c``."""

    def __init__(self, q, c=0.0):
        self.q = np.asarray(q, dtype=float)
        self.c = float(c)

    def value(self, v):
        return inner(self.q, v) + self.c

    def gradient(self, v):
        return self.q.copy()

    def bregman(self, v_new, v_old):
        return 0.0


class Quadratic(SmoothOracle):
    """``1/2 <v, Q v> + <q, v> + c`` on flat vectors, with ``Q`` symmetric PSD."""

    def __init__(self, Q, q=None, c=0.0):
        self.Q = np.asarray(Q, dtype=float)
        n = self.Q.shape[0]
        self.q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
        self.c = float(c)

    @property
    def lipschitz(self):
        return float(np.linalg.eigvalsh(self.Q)[-1])

    def value(self, v):
        return 0.5 * inner(v, self.Q @ v) + inner(self.q, v) + self.c

    def gradient(self, v):
        return self.Q @ v + self.q

    def bregman(self, v_new, v_old):
        dv = v_new - v_old
        return 0.5 * inner(dv, self.Q @ dv)


class Quartic(SmoothOracle):
    """``1/4 sum (v - c)^4``: gradient only locally Lipschitz."""

    def __init__(self, c=0.0):
        self.c = c

    def value(self, v):
        return 0.25 * float(np.sum((np.asarray(v) - self.c) ** 4))

    def gradient(self, v):
        return (np.asarray(v, dtype=float) - self.c) ** 3

    def bregman(self, v_new, v_old):
        # expanded to avoid cancellation between large quartic values
        a = np.asarray(v_old, dtype=float) - self.c
        dv = np.asarray(v_new, dtype=float) - np.asarray(v_old, dtype=float)
        return float(np.sum(1.5 * a**2 * dv**2 + a * dv**3 + 0.25 * dv**4))


class StackedSmooth(SmoothOracle):
    """``h(x) = sum_i h_i(x_i)`` over the rows of a stacked array."""

    def __init__(self, parts):
        self.parts = list(parts)

    def value(self, v):
        total = 0.0
        for h, vi in zip(self.parts, v):
            total += h.value(vi)
        return total

    def gradient(self, v):
        return np.stack([h.gradient(vi) for h, vi in zip(self.parts, v)])

    def in_domain(self, v):
        return all(h.in_domain(vi) for h, vi in zip(self.parts, v))

    def bregman(self, v_new, v_old):
        total = 0.0
        for h, a, b in zip(self.parts, v_new, v_old):
            total += h.bregman(a, b)
        return total


# ---------------------------------------------------------------------------
# linear maps
# ---------------------------------------------------------------------------

class LinearMap:
    """
    A linear operator given by its action and the action of its adjoint.

    ``operator_norm`` is exact when ``norm_known`` is true and an upper
    bound (possibly ``inf``) otherwise.
    """

    operator_norm = np.inf
    norm_known = False

    def apply(self, v):
        raise NotImplementedError

    def adjoint(self, w):
        raise NotImplementedError


class MatrixMap(LinearMap):
    """Dense matrix acting on the leading axis (vectors or row-stacked arrays)."""

    def __init__(self, M, norm_known=True):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.norm_known = norm_known
        self.operator_norm = float(np.linalg.norm(self.M, 2)) if norm_known else np.inf

    def apply(self, v):
        return self.M @ v

    def adjoint(self, w):
        return self.M.T @ w


class ScalarMap(LinearMap):
    """Multiplication by a scalar ``s``; self-adjoint."""

    def __init__(self, s):
        self.s = float(s)
        self.operator_norm = abs(self.s)
        self.norm_known = True

    def apply(self, v):
        return self.s * np.asarray(v, dtype=float)

    adjoint = apply


class ConsensusMap(LinearMap):
    """
    ``v -> 1/2 (I - W) v`` acting row-wise on stacked ``n x d`` arrays.

    This is ``K* K`` for the consensus coupling ``K = -((I - W)/2)^{1/2}``;
    ``operator_norm`` reports ``||K||``, so ``operator_norm**2`` equals
    ``(1 - lambda_min(W)) / 2``.  When a network is supplied the product
    with ``W`` is routed through a neighbour exchange.
    """

    def __init__(self, mixing, net=None):
        self.mixing = mixing
        self.net = net
        self.operator_norm = float(np.sqrt(max(0.5 * (1.0 - mixing.lambda_min), 0.0)))
        self.norm_known = True

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.net is not None:
            Wv = self.net.neighbor_mix(v, self.mixing)
        else:
            Wv = self.mixing.W @ v
        return 0.5 * (v - Wv)

    adjoint = apply


def consensus_map(mixing, net=None):
    """Return the self-adjoint map ``v -> (I - W) v / 2`` for a mixing matrix."""
    from .graph import MixingMatrix

    if not isinstance(mixing, MixingMatrix):
        raise TypeError("consensus_map expects a validated MixingMatrix")
    return ConsensusMap(mixing, net)
