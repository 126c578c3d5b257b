"""
Command-line experiment runner.

``distls run <config>`` builds the instance, runs every configured solver
from the same start and writes ``<solver>.csv`` traces plus
``summary.json``.  ``distls compare`` tabulates traces and ``distls
validate`` checks a configuration without running anything.

Exit codes: 0 success, 2 configuration or input error, 3 solver error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

from .config import ConfigError, load_config, serialize_config
from .distributed import (
    TRACE_COLUMNS,
    DistMonitor,
    DistRunConfig,
    default_tau0,
    run_pg_extra,
    solve,
    stepsize_cap,
)
from .exceptions import DomainError, SolverError
from .graph import Topology, TopologyError
from .io import InstanceFormatError, parse_edges, load_instance, write_pgm
from .netsim import Network
from .problems import build_covariance, build_poisson, covariance_start, poisson_start
from .reference import centralized_solve, dual_certificate

OUTPUT_ROOT_ENV = "DISTLS_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

ALG2_KIND = {
    "alg2_const": "constant",
    "alg2_sum": "sum",
    "alg2_min": "min",
    "alg2_sum_W": "sum_W",
    "alg2_min_W": "min_W",
}


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def output_dir(cfg):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return os.path.join(root, cfg.output) if root else cfg.output


def build_instance(cfg, base_dir="."):
    """
    Returns
    -------
    (kind, DistProblem, instance, x1)
    """
    if cfg.experiment == "custom":
        path = cfg.instance if os.path.isabs(cfg.instance) else os.path.join(base_dir, cfg.instance)
        kind, prob, inst = load_instance(path)
    else:
        edges = parse_edges(cfg.edges.replace(",", " ")) if cfg.edges.strip() else None
        topo = Topology.from_kind(cfg.topology, cfg.n, seed=cfg.seed, edges=edges, radius=cfg.radius)
        if cfg.experiment in ("poisson", "poisson_l2"):
            kind = "poisson"
            prob, inst = build_poisson(
                n=cfg.n,
                d=cfg.d,
                p=cfg.p or None,
                topology=topo,
                noise_seed=cfg.seed,
                blur_kind=cfg.blur,
                lam=cfg.lam,
                zero_noise=cfg.zero_noise,
                background=cfg.background,
                intensity=cfg.intensity,
            )
        else:
            kind = "covariance"
            prob, inst = build_covariance(
                n=cfg.n,
                d=cfg.d,
                samples_per_agent=cfg.samples_per_agent,
                topology=topo,
                seed=cfg.seed,
                l=cfg.l,
                u=cfg.u,
            )
    x1 = poisson_start(inst) if kind == "poisson" else covariance_start(inst, prob.n)
    return kind, prob, inst, x1


def _safe_objective(prob, X):
    try:
        val = prob.stacked_objective(X)
    except (DomainError, FloatingPointError):
        return None
    return val if math.isfinite(val) else None


def run_solver(name, cfg, prob, x1, x_ref=None, u_hat=None):
    """Run one named solver on a fresh network; returns (DistResult, Network)."""
    net = Network(prob.mixing.topology)
    p = cfg.params()
    if name == "pgextra_const":
        res = run_pg_extra(
            prob, cfg.sigma, net, x1, max_iter=cfg.max_iter, tol=cfg.tol, x_ref=x_ref, record_divergence=True
        )
        return res, net
    kind = ALG2_KIND[name]
    tau0 = cfg.tau0_value(stepsize_cap(prob.mixing, p))
    if kind == "constant" and tau0 is None:
        tau0 = default_tau0(prob.mixing, p)
    dcfg = DistRunConfig(params=p, kind=kind, tau0=tau0, max_iter=cfg.max_iter, tol=cfg.tol)
    monitor = DistMonitor(prob, x_ref, u_hat, p.beta) if u_hat is not None else None
    return solve(prob, dcfg, net, x1, x_ref=x_ref, monitor=monitor), net


def run_all(cfg, kind, prob, inst, x1, out, log=print):
    """
    Run every configured solver and write traces, images and summary.json
    into ``out``.  :class:`SolverError` propagates after the summary of the
    solvers finished so far has been written.
    """
    os.makedirs(out, exist_ok=True)
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, "solvers": {}}
    image_shape = getattr(inst, "image_shape", None) if kind == "poisson" else None
    try:
        x_ref = u_hat = None
        if cfg.reference:
            ref = centralized_solve(prob, x1.mean(axis=0))
            u_hat, _ = dual_certificate(prob, ref.x_star)
            x_ref = ref.x_star
            summary["reference_objective"] = ref.objective
        if image_shape is not None:
            write_pgm(os.path.join(out, "x_true.pgm"), inst.x_true.reshape(image_shape))
        for name in cfg.solvers:
            t0 = time.perf_counter()
            res, net = run_solver(name, cfg, prob, x1, x_ref, u_hat)
            wall = time.perf_counter() - t0
            res.trace.write_csv(os.path.join(out, f"{name}.csv"))
            last = res.trace.rows[-1] if res.trace.rows else None
            summary["solvers"][name] = {
                "status": res.trace.status,
                "iterations": len(res.trace),
                "final_objective": _safe_objective(prob, res.x),
                "prox_grad_rounds": last.prox_grad_rounds if last else 0,
                "neighbor_rounds": net.neighbor_rounds,
                "allreduce_sum": net.allreduce_sum_calls,
                "allreduce_min": net.allreduce_min_calls,
                "total_rounds": net.round_counter,
                "final_rel_error_mean": last.rel_error_mean if last else None,
                "final_feasibility": last.feasibility if last else None,
                "wall_time_s": wall,
            }
            if image_shape is not None and res.trace.status != "diverged":
                write_pgm(os.path.join(out, f"{name}.pgm"), res.x.mean(axis=0).reshape(image_shape))
            log(f"{name}: {res.trace.status} after {len(res.trace)} iterations")
    finally:
        _write_summary(out, summary)
    return summary


def cmd_run(args):
    try:
        cfg = load_config(args.config)
        kind, prob, inst, x1 = build_instance(cfg, os.path.dirname(os.path.abspath(args.config)))
    except (ConfigError, InstanceFormatError, TopologyError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"cannot build instance: {exc}")
    out = output_dir(cfg)
    try:
        run_all(cfg, kind, prob, inst, x1, out)
    except SolverError as exc:
        return _fail(EXIT_SOLVER, f"solver failed: {exc}")
    print(f"wrote {len(cfg.solvers)} trace(s) to {out}")
    return EXIT_OK


def _write_summary(out, summary):
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


class TraceSchemaError(ValueError):
    pass


def _num(text):
    return float(text) if text != "" else None


def read_trace(path):
    """Columns of a trace CSV as lists; raises TraceSchemaError on a header mismatch."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise TraceSchemaError(f"{path}: header does not match the trace schema")
    cols = {c: [] for c in TRACE_COLUMNS}
    for r in rows[1:]:
        if len(r) != len(TRACE_COLUMNS):
            raise TraceSchemaError(f"{path}: row with {len(r)} fields")
        for c, v in zip(TRACE_COLUMNS, r):
            cols[c].append(v if c == "backtracks_per_agent" else _num(v))
    return cols


def _status(path):
    name = os.path.splitext(os.path.basename(path))[0]
    summ = os.path.join(os.path.dirname(os.path.abspath(path)), "summary.json")
    try:
        with open(summ) as fh:
            return json.load(fh)["solvers"][name]["status"]
    except (OSError, KeyError, ValueError):
        return "unknown"


def _value_at(cols, name, rounds):
    """Last value of ``name`` recorded at or before ``rounds`` prox-gradient rounds."""
    val = None
    for r, v in zip(cols["prox_grad_rounds"], cols[name]):
        if r > rounds:
            break
        val = v
    return val


def summarize(paths):
    traces = [(p, read_trace(p)) for p in paths]
    finals = [c["prox_grad_rounds"][-1] for _, c in traces if c["prox_grad_rounds"]]
    horizon = min(finals) if finals else 0
    marks = [horizon * q / 4.0 for q in (1, 2, 3, 4)]
    out = []
    for path, cols in traces:
        status = _status(path)
        entry = {
            "trace": path,
            "solver": os.path.splitext(os.path.basename(path))[0],
            "status": status,
            "iterations": len(cols["k"]),
            "final_rounds": cols["prox_grad_rounds"][-1] if cols["k"] else None,
            "aligned_rounds": marks,
        }
        for metric in ("rel_error_mean", "feasibility", "tau"):
            entry[metric] = {
                "final": cols[metric][-1] if cols[metric] else None,
                "quartiles": [_value_at(cols, metric, m) for m in marks],
            }
        out.append(entry)
    return out


def _cell(v):
    return "-" if v is None else f"{v:.3e}"


def cmd_compare(args):
    try:
        table = summarize(args.traces)
    except (TraceSchemaError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if args.json:
        json.dump(table, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return EXIT_OK
    head = f"{'solver':<16}{'status':<11}{'iters':>7}{'rounds':>8}"
    print(head + "  metric          q1         q2         q3         q4         final")
    for e in table:
        status = "DIVERGED" if e["status"] == "diverged" else e["status"]
        first = f"{e['solver']:<16}{status:<11}{e['iterations']:>7}{int(e['final_rounds'] or 0):>8}"
        for j, metric in enumerate(("rel_error_mean", "feasibility", "tau")):
            lead = first if j == 0 else " " * len(first)
            vals = " ".join(f"{_cell(v):>10}" for v in e[metric]["quartiles"])
            print(f"{lead}  {metric:<15}{vals} {_cell(e[metric]['final']):>10}")
    return EXIT_OK


def cmd_validate(args):
    try:
        cfg = load_config(args.config)
        if cfg.experiment == "custom":
            base = os.path.dirname(os.path.abspath(args.config))
            build_instance(cfg, base)
    except (ConfigError, InstanceFormatError, TopologyError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    sys.stdout.write(serialize_config(cfg))
    return EXIT_OK


def make_parser():
    ap = argparse.ArgumentParser(prog="distls", description="Distributed proximal-gradient experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the solvers listed in a config file")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("compare", help="tabulate one or more trace CSVs")
    c.add_argument("traces", nargs="+")
    c.add_argument("--json", action="store_true", help="machine-readable output")
    c.set_defaults(func=cmd_compare)
    v = sub.add_parser("validate", help="parse a config and print its normalised form")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
