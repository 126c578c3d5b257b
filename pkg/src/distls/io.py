"""
File formats: dense matrices as CSV, images as plain PGM, and instance
directories described by an INI manifest.

Matrix CSV layout: the first line is ``rows,cols`` with the two integers,
then ``rows`` lines of ``cols`` comma-separated floats (17 significant
digits, row-major).
"""

from __future__ import annotations

import configparser
import os

import numpy as np

from .distributed import DistProblem, fmt_float
from .graph import Topology, metropolis_weights
from .operators import MatrixMap, NonnegIndicator, NonnegL2, SpectralBox
from .problems import (
    CovarianceInstance,
    LogDetSmooth,
    PoissonInstance,
    PoissonSmooth,
    SeparableBlur,
)


class InstanceFormatError(ValueError):
    """A matrix file or manifest is malformed."""


def write_matrix_csv(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError("only 1-d or 2-d arrays can be written")
    lines = [f"{M.shape[0]},{M.shape[1]}"]
    lines.extend(",".join(fmt_float(v) for v in row) for row in M)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise InstanceFormatError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(t) for t in lines[0].split(","))
    except ValueError as exc:
        raise InstanceFormatError(f"{path}: first line must be 'rows,cols'") from exc
    body = lines[1:]
    if len(body) != rows:
        raise InstanceFormatError(f"{path}: expected {rows} rows, found {len(body)}")
    M = np.empty((rows, cols))
    for r, ln in enumerate(body):
        vals = ln.split(",")
        if len(vals) != cols:
            raise InstanceFormatError(f"{path}: row {r} has {len(vals)} entries, expected {cols}")
        M[r] = [float(v) for v in vals]
    return M


def write_pgm(path, img, maxval=255):
    """
    Plain (P2) greyscale image, linearly scaled so the largest pixel maps to
    ``maxval``.  Negative pixels are clipped to zero.
    """
    img = np.clip(np.asarray(img, dtype=float), 0.0, None)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-d image")
    top = float(img.max())
    scaled = np.zeros(img.shape, dtype=int) if top <= 0 else np.rint(img / top * maxval).astype(int)
    h, w = img.shape
    lines = ["P2", f"{w} {h}", str(maxval)]
    lines.extend(" ".join(str(v) for v in row) for row in scaled)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pgm(path):
    with open(path) as fh:
        tokens = [t for ln in fh if not ln.startswith("#") for t in ln.split()]
    if not tokens or tokens[0] != "P2":
        raise InstanceFormatError(f"{path}: not a plain PGM file")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=int)
    if data.size != w * h:
        raise InstanceFormatError(f"{path}: expected {w * h} pixels, found {data.size}")
    return data.reshape(h, w)


# ---------------------------------------------------------------------------
# instance directories
# ---------------------------------------------------------------------------

MANIFEST = "manifest.ini"


def _edges_text(topology):
    return " ".join(f"{i}-{j}" for i, j in sorted(topology.edges))


def parse_edges(text):
    edges = []
    for tok in text.split():
        a, _, b = tok.partition("-")
        edges.append((int(a), int(b)))
    return edges


def save_instance(directory, kind, prob, inst):
    """
    Write a Poisson or covariance instance to ``directory``.

    Poisson blur operators must be :class:`SeparableBlur` or
    :class:`MatrixMap`; separable ones are stored by their two 1-d factors.
    """
    os.makedirs(directory, exist_ok=True)
    cp = configparser.ConfigParser()
    cp["instance"] = {"kind": kind, "n": str(prob.n), "d": str(prob.d)}
    cp["topology"] = {"n": str(prob.n), "edges": _edges_text(prob.mixing.topology)}
    if kind == "poisson":
        cp["poisson"] = {"lam": fmt_float(inst.lam)}
        if inst.image_shape is not None:
            cp["poisson"]["image_shape"] = f"{inst.image_shape[0]},{inst.image_shape[1]}"
        for i, (A, b, y) in enumerate(zip(inst.A, inst.b, inst.y)):
            if isinstance(A, SeparableBlur):
                write_matrix_csv(os.path.join(directory, f"A{i}_rows.csv"), A.Br)
                write_matrix_csv(os.path.join(directory, f"A{i}_cols.csv"), A.Bc)
            elif isinstance(A, MatrixMap):
                write_matrix_csv(os.path.join(directory, f"A{i}.csv"), A.M)
            else:
                raise TypeError(f"cannot serialise blur operator of type {type(A).__name__}")
            write_matrix_csv(os.path.join(directory, f"b{i}.csv"), b)
            write_matrix_csv(os.path.join(directory, f"y{i}.csv"), y)
        write_matrix_csv(os.path.join(directory, "x_true.csv"), inst.x_true)
        if inst.image_shape is not None:
            write_pgm(os.path.join(directory, "x_true.pgm"), inst.x_true.reshape(inst.image_shape))
    elif kind == "covariance":
        cp["covariance"] = {
            "l": fmt_float(inst.l),
            "u": fmt_float(inst.u),
            "dim": str(inst.dim),
            "counts": ",".join(str(c) for c in inst.counts),
        }
        for i, Y in enumerate(inst.Y):
            write_matrix_csv(os.path.join(directory, f"Y{i}.csv"), Y)
        write_matrix_csv(os.path.join(directory, "Sigma.csv"), inst.Sigma)
        write_matrix_csv(os.path.join(directory, "X_true.csv"), inst.X_true)
    else:
        raise ValueError(f"unknown instance kind {kind!r}")
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        cp.write(fh)


def load_instance(directory):
    """
    Read an instance written by :func:`save_instance`.

    Returns
    -------
    (kind, DistProblem, instance)
    """
    path = os.path.join(directory, MANIFEST)
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InstanceFormatError(f"missing manifest {path}")
    try:
        kind = cp["instance"]["kind"]
        n = cp["instance"].getint("n")
        d = cp["instance"].getint("d")
        topo = Topology(n, parse_edges(cp["topology"].get("edges", "")))
    except (KeyError, ValueError) as exc:
        raise InstanceFormatError(f"{path}: {exc}") from exc
    mixing = metropolis_weights(topo)

    def mat(name):
        return read_matrix_csv(os.path.join(directory, name))

    if kind == "poisson":
        sec = cp["poisson"]
        lam = sec.getfloat("lam", 0.0)
        shape = sec.get("image_shape")
        shape = tuple(int(t) for t in shape.split(",")) if shape else None
        A, b, y = [], [], []
        for i in range(n):
            rows = os.path.join(directory, f"A{i}_rows.csv")
            if os.path.exists(rows):
                A.append(SeparableBlur(read_matrix_csv(rows), mat(f"A{i}_cols.csv")))
            else:
                A.append(MatrixMap(mat(f"A{i}.csv")))
            b.append(mat(f"b{i}.csv").ravel())
            y.append(mat(f"y{i}.csv").ravel())
        x_true = mat("x_true.csv").ravel()
        hs = [PoissonSmooth(Ai, bi, yi) for Ai, bi, yi in zip(A, b, y)]
        f = NonnegL2(lam) if lam > 0 else NonnegIndicator()
        inst = PoissonInstance(A, b, y, x_true, lam, shape)
        return kind, DistProblem([f] * n, hs, mixing, d), inst
    if kind == "covariance":
        sec = cp["covariance"]
        l, u, dim = sec.getfloat("l"), sec.getfloat("u"), sec.getint("dim")
        counts = [int(c) for c in sec["counts"].split(",")]
        Y = [mat(f"Y{i}.csv") for i in range(n)]
        box = SpectralBox(l, u, dim)
        hs = [LogDetSmooth(Yi, m, dim) for Yi, m in zip(Y, counts)]
        inst = CovarianceInstance(Y, counts, l, u, mat("Sigma.csv"), mat("X_true.csv"), dim)
        return kind, DistProblem([box] * n, hs, mixing, d), inst
    raise InstanceFormatError(f"{path}: unknown instance kind {kind!r}")
