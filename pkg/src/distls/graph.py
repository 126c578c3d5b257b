"""
Communication topologies and validated mixing matrices.
"""

from __future__ import annotations

from collections import deque

import numpy as np

EIG_TOL = 1e-10


class TopologyError(ValueError):
    """The edge set is malformed or the graph is disconnected."""


class MixingMatrixError(ValueError):
    """Base class for a matrix that fails one of the mixing-matrix properties."""


class SparsityError(MixingMatrixError):
    """A nonzero weight sits on a pair of agents that are not neighbours."""


class SymmetryError(MixingMatrixError):
    """The stored matrix is not exactly symmetric."""


class ConsensusKernelError(MixingMatrixError):
    """``W e != e`` or the kernel of ``I - W`` is larger than the consensus line."""


class SpectrumError(MixingMatrixError):
    """An eigenvalue falls outside ``(-1, 1]``."""


class Topology:
    """
    Undirected connected graph on agents ``0..n-1``.

    Parameters
    ----------
    n : int
        Number of agents.
    edges : iterable of (int, int)
        Undirected pairs; duplicates and orientation are ignored.
    """

    def __init__(self, n, edges=()):
        n = int(n)
        if n < 1:
            raise TopologyError("need at least one agent")
        es = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise TopologyError(f"self-loop at agent {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"edge ({i}, {j}) out of range for n={n}")
            es.add((min(i, j), max(i, j)))
        self.n = n
        self.edges = frozenset(es)
        nbrs = [[] for _ in range(n)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        self.neighbors = tuple(tuple(sorted(a)) for a in nbrs)
        if not self.is_connected():
            raise TopologyError("topology is disconnected")

    def degree(self, i):
        return len(self.neighbors[i])

    def is_connected(self):
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in self.neighbors[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n

    def adjacency(self):
        A = np.zeros((self.n, self.n))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def __repr__(self):
        return f"Topology(n={self.n}, edges={len(self.edges)})"

    # named generators ------------------------------------------------------

    @classmethod
    def ring(cls, n):
        if n <= 2:
            return cls.path(n)
        return cls(n, [(i, (i + 1) % n) for i in range(n)])

    @classmethod
    def path(cls, n):
        return cls(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def complete(cls, n):
        return cls(n, [(i, j) for i in range(n) for j in range(i + 1, n)])

    @classmethod
    def star(cls, n):
        return cls(n, [(0, j) for j in range(1, n)])

    @classmethod
    def random_geometric(cls, n, radius=0.5, seed=0):
        """
        Agents placed uniformly in the unit square, linked when closer than
        ``radius``.  The radius is enlarged by 10% steps until connected.
        """
        rng = np.random.default_rng(seed)
        pts = rng.random((n, 2))
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        r = float(radius)
        while True:
            edges = [(i, j) for i in range(n) for j in range(i + 1, n) if dist[i, j] < r]
            try:
                return cls(n, edges)
            except TopologyError:
                r *= 1.1

    @classmethod
    def from_kind(cls, kind, n, seed=0, edges=None, radius=0.5):
        if kind == "ring":
            return cls.ring(n)
        if kind == "path":
            return cls.path(n)
        if kind == "complete":
            return cls.complete(n)
        if kind == "star":
            return cls.star(n)
        if kind == "random_geometric":
            return cls.random_geometric(n, radius=radius, seed=seed)
        if kind == "edges":
            if edges is None:
                raise TopologyError("kind 'edges' requires an explicit edge list")
            return cls(n, edges)
        raise TopologyError(f"unknown topology kind {kind!r}")


class MixingMatrix:
    """
    A validated mixing matrix with its smallest eigenvalue cached.

    Build instances with :func:`validate` or :func:`metropolis_weights`.
    """

    def __init__(self, W, lambda_min, topology):
        W = np.array(W, dtype=float)
        W.setflags(write=False)
        self.W = W
        self.lambda_min = float(lambda_min)
        self.topology = topology

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def spectral_gap(self):
        """``1 - lambda_min(W)``, the quantity that caps the stepsize."""
        return 1.0 - self.lambda_min


def validate(W, topo):
    """
    Check the four mixing-matrix properties and cache ``lambda_min``.

    Raises
    ------
    SparsityError, SymmetryError, ConsensusKernelError, SpectrumError
        One distinct exception type per violated property.
    """
    W = np.asarray(W, dtype=float)
    n = topo.n
    if W.shape != (n, n):
        raise ValueError(f"W has shape {W.shape}, topology has {n} agents")
    if not np.all(np.isfinite(W)):
        raise ValueError("W has non-finite entries")
    for i in range(n):
        allowed = set(topo.neighbors[i]) | {i}
        for j in range(n):
            if j not in allowed and W[i, j] != 0.0:
                raise SparsityError(f"W[{i},{j}] = {W[i, j]} but ({i},{j}) is not an edge")
    if not np.array_equal(W, W.T):
        raise SymmetryError("W is not symmetric")
    if np.max(np.abs(W.sum(axis=1) - 1.0)) > EIG_TOL:
        raise ConsensusKernelError("rows of W do not sum to one")
    lam = np.linalg.eigvalsh(W)
    # eigenvalues of I - W in ascending order: the smallest is the consensus zero
    gap = np.sort(1.0 - lam)
    if n > 1 and gap[1] <= EIG_TOL:
        raise ConsensusKernelError("kernel of I - W is larger than the consensus line")
    if lam[0] <= -1.0 + EIG_TOL:
        raise SpectrumError(f"lambda_min(W) = {lam[0]} is not above -1")
    if lam[-1] > 1.0 + EIG_TOL:
        raise SpectrumError(f"lambda_max(W) = {lam[-1]} exceeds 1")
    return MixingMatrix(W, lam[0], topo)


def metropolis_weights(topo):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on each edge."""
    n = topo.n
    deg = [topo.degree(i) for i in range(n)]
    W = np.zeros((n, n))
    for i, j in topo.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        W[i, i] = 1.0 - sum(W[i, j] for j in topo.neighbors[i])
    return validate(W, topo)


def uniform_complete(n):
    """``W = J / n`` on the complete graph, the best-mixing choice."""
    topo = Topology.complete(n)
    return validate(np.full((n, n), 1.0 / n), topo)
