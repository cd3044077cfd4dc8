"""Command-line entry point: ``transient-bbp <subcommand> [flags]``.

Every run writes its tables plus a ``meta.json`` into the output directory
and prints a one-line JSON summary. Exit codes: 0 success, 1 usage error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
import time

import numpy as np

from . import __version__, errors
from . import io as bio
from .dyson import DEFAULT_EPSILON, spectral_density
from .model import ModelParams
from .outlier import (
    DEFAULT_WINDOW,
    classify_regime,
    critical_theta,
    edge_state,
    outlier_location,
    overlap_theory,
)
from .scans import N_LAMBDA, N_THETA, N_TIMES, phase_diagram_theta_lambda, phase_diagram_theta_time
from .simulate import SimConfig, empirical_overlap_curve, run_ensemble

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

_NUMERIC_ERRORS = (
    errors.DysonConvergenceError,
    errors.DysonDomainError,
    errors.SingularityError,
    errors.EdgeDetectionError,
    errors.DegenerateRootError,
    errors.ResolutionError,
    errors.DegenerateBlockError,
    FloatingPointError,
    ArithmeticError,
    RuntimeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _times_default(n=N_TIMES):
    return f"log:{DEFAULT_WINDOW[0]}:{DEFAULT_WINDOW[1]}:{n}"


def _model_flags(p, theta=True):
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--lambda-minus", type=float, default=0.1)
    if theta:
        p.add_argument("--theta", type=float, default=0.0)


def _common_flags(p):
    p.add_argument("--out", default=None,
                   help=f"output directory (default ${bio.OUT_ENV} or ./{bio.DEFAULT_OUT})")
    p.add_argument("--format", choices=("csv", "json", "both"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transient-bbp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("density", help="limiting spectral density on a grid")
    _model_flags(p, theta=False)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--grid", default="-6:8:0.01", help="lo:hi:step")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    _common_flags(p)

    for name, helptext in (("edges", "bulk edges L-, L+"),
                           ("theta-c", "critical teacher strength theta_c(t)"),
                           ("outlier", "outlier location xi(t)"),
                           ("overlap", "theoretical overlap q(t)")):
        p = sub.add_parser(name, help=helptext)
        _model_flags(p, theta=name in ("outlier", "overlap"))
        p.add_argument("--times", default=_times_default())
        _common_flags(p)

    p = sub.add_parser("regime", help="weak / transient / persistent classification")
    _model_flags(p)
    p.add_argument("--window", default=f"{DEFAULT_WINDOW[0]}:{DEFAULT_WINDOW[1]}",
                   help="t_lo:t_hi")
    p.add_argument("--grid-size", type=int, default=N_TIMES)
    _common_flags(p)

    p = sub.add_parser("phase-tt", help="(theta, t) phase diagram")
    _model_flags(p, theta=False)
    p.add_argument("--thetas", default=f"log:0.1:20:{N_THETA}")
    p.add_argument("--times", default=_times_default())
    p.add_argument("--no-stopping", action="store_true")
    _common_flags(p)

    p = sub.add_parser("phase-tl", help="(theta, lambda_minus) regime map")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--thetas", default=f"log:0.1:20:{N_THETA}")
    p.add_argument("--lambdas", default=f"lin:0.025:1:{N_LAMBDA}")
    p.add_argument("--window", default=f"{DEFAULT_WINDOW[0]}:{DEFAULT_WINDOW[1]}")
    p.add_argument("--grid-size", type=int, default=N_TIMES)
    p.add_argument("--workers", type=int, default=1)
    _common_flags(p)

    for name in ("simulate", "powerlaw"):
        p = sub.add_parser(name, help="finite-N Monte Carlo of the flow"
                           + (" (power-law spectrum)" if name == "powerlaw" else ""))
        _model_flags(p)
        p.add_argument("--n", type=int, default=500)
        p.add_argument("--realizations", type=int, default=20)
        p.add_argument("--times", default="log:0.1:2000:8")
        p.add_argument("--seed", type=int, default=0)
        if name == "powerlaw":
            p.add_argument("--beta", type=float, default=1.5)
            p.add_argument("--lambda-min", type=float, default=0.1)
            p.add_argument("--lambda-max", type=float, default=5.0)
        _common_flags(p)
    return parser


_NEG_VALUE = re.compile(r"^-[\d.]")


def _merge_negative_values(argv):
    """``--grid -6:8:0.01`` -> ``--grid=-6:8:0.01`` so argparse keeps the value."""
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if (a.startswith("--") and "=" not in a and i + 1 < len(argv)
                and _NEG_VALUE.match(argv[i + 1])):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def _params(ns, theta=None) -> ModelParams:
    th = getattr(ns, "theta", 0.0) if theta is None else theta
    return ModelParams(gamma=ns.gamma, alpha=ns.alpha, lambda_minus=ns.lambda_minus, theta=th)


def _window(spec):
    try:
        a, b = (float(x) for x in spec.split(":"))
    except ValueError:
        raise errors.InvalidArgumentError(f"window must be t_lo:t_hi, got {spec!r}") from None
    if not 0 < a < b:
        raise errors.InvalidArgumentError(f"window needs 0 < t_lo < t_hi, got {spec!r}")
    return a, b


def _opt(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


class _Run:
    """Collects tables and documents, then writes them from one place."""

    def __init__(self, ns):
        self.ns = ns
        self.tables = []
        self.documents = []

    def table(self, stem, header, rows):
        self.tables.append((stem, list(header), [tuple(r) for r in rows]))

    def document(self, stem, doc):
        self.documents.append((stem, doc))

    def write(self, out, duration):
        fmt = self.ns.format
        files = []
        for stem, header, rows in self.tables:
            if fmt in ("csv", "both"):
                files.append(bio.write_table(out / f"{stem}.csv", header, rows))
            if fmt in ("json", "both"):
                files.append(bio.write_summary(
                    out / f"{stem}.json",
                    {"columns": header, "rows": [list(r) for r in rows]}))
        for stem, doc in self.documents:
            files.append(bio.write_summary(out / f"{stem}.json", doc))
        config = {k: v for k, v in vars(self.ns).items()}
        meta = {"command": self.ns.command, "config": config, "version": __version__,
                "duration_s": duration, "files": [f.name for f in files]}
        files.append(bio.write_summary(out / "meta.json", meta))
        return files


# ---------------------------------------------------------------------------
# subcommands, each returns the summary dict


def _cmd_density(ns, run):
    grid = bio.parse_grid(ns.grid)
    dc = spectral_density(_params(ns, 0.0), ns.t, grid, ns.epsilon)
    run.table("density", ("lambda", "rho"), zip(dc.grid, dc.rho))
    mass = float(np.sum(dc.rho) * (grid[1] - grid[0])) if len(grid) > 1 else 0.0
    return {"points": len(grid), "t": ns.t, "mass": mass}


def _cmd_edges(ns, run):
    p = _params(ns, 0.0)
    rows = []
    for t in bio.parse_times(ns.times):
        st = edge_state(p, t)
        rows.append((t, st.lower, st.upper))
    run.table("edges", ("t", "lower", "upper"), rows)
    return {"points": len(rows)}


def _cmd_theta_c(ns, run):
    p = _params(ns, 0.0)
    rows = []
    for t in bio.parse_times(ns.times):
        try:
            v = critical_theta(p, t)
            rows.append((t, v if math.isfinite(v) else None, "ok" if math.isfinite(v) else "infinite"))
        except _NUMERIC_ERRORS as exc:
            rows.append((t, None, f"error: {exc}"))
    run.table("theta_c", ("t", "theta_c", "status"), rows)
    vals = [r[1] for r in rows if r[1] is not None]
    return {"points": len(rows), "valid": len(vals), "min_theta_c": min(vals) if vals else None}


def _cmd_outlier(ns, run):
    p = _params(ns)
    rows = []
    for t in bio.parse_times(ns.times):
        r = outlier_location(p, t)
        rows.append((t, r.exists, r.xi, r.side or "", r.margin))
    run.table("outlier", ("t", "exists", "xi", "side", "margin"), rows)
    return {"points": len(rows), "with_outlier": sum(bool(r[1]) for r in rows)}


def _cmd_overlap(ns, run):
    p = _params(ns)
    rows = []
    for t in bio.parse_times(ns.times):
        r = outlier_location(p, t)
        q = overlap_theory(p, t, outlier=r)
        rows.append((t, r.xi if r.exists else None, q))
    run.table("overlap", ("t", "xi", "q"), rows)
    return {"points": len(rows), "q_max": max(r[2] for r in rows) if rows else None}


def _cmd_regime(ns, run):
    rep = classify_regime(_params(ns), _window(ns.window), ns.grid_size)
    doc = {"regime": rep.regime, "t1": rep.t1, "t2": rep.t2, "t_opt": rep.t_opt,
           "q_max": rep.q_max, "multimodal": rep.multimodal}
    run.document("regime", doc)
    run.table("discriminant", ("t", "F"), zip(rep.times, rep.discriminant))
    return doc


def _cmd_phase_tt(ns, run):
    d = phase_diagram_theta_time(_params(ns, 0.0), bio.parse_times(ns.thetas),
                                 bio.parse_times(ns.times), with_stopping=not ns.no_stopping)
    run.table("phase_tt", ("theta", "regime", "t1", "t2", "t_opt", "q_max", "status"),
              ((th, lab, _opt(a), _opt(b), _opt(c), _opt(q), st)
               for th, lab, a, b, c, q, st in d.rows()))
    run.table("boundary", ("t", "theta_c", "status"),
              zip(d.boundary.times, map(_opt, d.boundary.theta_c), d.boundary.status))
    labels, counts = np.unique(d.regime, return_counts=True)
    summary = {"regime_counts": {str(k): int(c) for k, c in zip(labels, counts)},
               "boundary_t": d.boundary.times, "boundary_theta_c": d.boundary.theta_c}
    run.document("summary", summary)
    return {"regime_counts": summary["regime_counts"]}


def _cmd_phase_tl(ns, run):
    d = phase_diagram_theta_lambda(ns.gamma, ns.alpha, bio.parse_times(ns.thetas),
                                   bio.parse_times(ns.lambdas), _window(ns.window),
                                   ns.grid_size, workers=ns.workers)
    run.table("phase_tl", ("theta", "lambda_minus", "label", "status"), d.rows())
    summary = {"regime_counts": d.counts(), "theta_grid": d.theta_grid,
               "lambda_grid": d.lambda_grid}
    run.document("summary", summary)
    return {"regime_counts": summary["regime_counts"]}


def _sim_config(ns, kind):
    extra = {}
    if kind == "power-law":
        extra = dict(beta=ns.beta, lambda_min=ns.lambda_min, lambda_max=ns.lambda_max)
    return SimConfig(n=ns.n, params=_params(ns), times=tuple(bio.parse_times(ns.times)),
                     n_realizations=ns.realizations, seed=ns.seed, spectrum_kind=kind,
                     **extra)


def _simulate(ns, run, kind):
    cfg = _sim_config(ns, kind)
    ens = run_ensemble(cfg)
    rows, top = [], []
    for per_time in ens:
        for s in per_time:
            rows.extend((s.t, s.realization_id, float(e)) for e in s.eigenvalues)
    run.table("eigenvalues", ("t", "realization_id", "eigenvalue"), rows)
    q = np.array([[s.top_overlap for s in per_time] for per_time in ens])
    mean = q.mean(axis=0)
    se = q.std(axis=0, ddof=1) / math.sqrt(len(ens)) if len(ens) > 1 else np.full_like(mean, np.nan)
    run.table("overlap", ("t", "mean_overlap", "stderr"),
              zip(cfg.times, mean, map(_opt, se)))
    tops = np.array([[s.eigenvalues[-1] for s in per_time] for per_time in ens]).mean(axis=0)
    return {"n": cfg.n, "realizations": cfg.n_realizations, "seed": cfg.seed,
            "times": list(cfg.times), "mean_top_eigenvalue": tops, "mean_overlap": mean}


def _cmd_powerlaw(ns, run):
    # eigenvalue dumps are large and not needed here; only the overlap curve
    cfg = _sim_config(ns, "power-law")
    times, mean, se = empirical_overlap_curve(cfg)
    run.table("overlap", ("t", "mean_overlap", "stderr"), zip(times, mean, map(_opt, se)))
    return {"n": cfg.n, "realizations": cfg.n_realizations, "seed": cfg.seed,
            "peak_overlap": float(mean.max()), "final_overlap": float(mean[-1])}


COMMANDS = {
    "density": _cmd_density,
    "edges": _cmd_edges,
    "theta-c": _cmd_theta_c,
    "outlier": _cmd_outlier,
    "overlap": _cmd_overlap,
    "regime": _cmd_regime,
    "phase-tt": _cmd_phase_tt,
    "phase-tl": _cmd_phase_tl,
    "simulate": lambda ns, run: _simulate(ns, run, "two-block"),
    "powerlaw": _cmd_powerlaw,
}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = build_parser().parse_args(_merge_negative_values(argv))
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    job = _Run(ns)
    start = time.perf_counter()
    try:
        out = bio.output_dir(ns.out)
        summary = COMMANDS[ns.command](ns, job)
        files = job.write(out, time.perf_counter() - start)
    except errors.InvalidArgumentError as exc:
        print(f"transient-bbp {ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (*_NUMERIC_ERRORS, OSError) as exc:
        print(f"transient-bbp {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    line = {"command": ns.command, "status": "ok", **summary,
            "out": str(out), "files": [f.name for f in files]}
    print(bio.dumps(line))
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
