"""Parameter sweeps: threshold curves and the (theta, t) / (theta, lambda_minus) phase diagrams.

Cells never abort a sweep; each carries a status string ("ok" or the error
message).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams
from .outlier import (
    DEFAULT_WINDOW,
    EdgeOptions,
    classify_regime,
    critical_theta,
    refine_transition,
)

__all__ = [
    "ThetaCCurve",
    "PhaseDiagramTT",
    "PhaseDiagramTL",
    "default_time_grid",
    "theta_c_curve",
    "phase_diagram_theta_time",
    "phase_diagram_theta_lambda",
    "refine_transition",
]

N_TIMES = 60
N_THETA = 60
N_LAMBDA = 40


def default_time_grid(n=N_TIMES, window=DEFAULT_WINDOW):
    return np.geomspace(window[0], window[1], n)


@dataclass
class ThetaCCurve:
    times: np.ndarray
    theta_c: np.ndarray  # NaN where infinite or failed
    status: list

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.theta_c)


def theta_c_curve(params: ModelParams, time_grid=None, opts: EdgeOptions = None) -> ThetaCCurve:
    times = default_time_grid() if time_grid is None else np.asarray(time_grid, dtype=float)
    vals = np.full(len(times), np.nan)
    status = []
    for i, t in enumerate(times):
        try:
            v = critical_theta(params, t, opts)
        except Exception as exc:  # noqa: BLE001 -- recorded per point
            status.append(f"error: {exc}")
            continue
        if math.isinf(v):
            status.append("infinite")
        else:
            vals[i] = v
            status.append("ok")
    return ThetaCCurve(times, vals, status)


@dataclass
class PhaseDiagramTT:
    theta_grid: np.ndarray
    time_grid: np.ndarray
    boundary: ThetaCCurve
    regime: list
    t1: np.ndarray
    t2: np.ndarray
    t_opt: np.ndarray
    q_max: np.ndarray
    status: list

    def rows(self):
        for i, th in enumerate(self.theta_grid):
            yield (float(th), self.regime[i], self.t1[i], self.t2[i], self.t_opt[i],
                   self.q_max[i], self.status[i])


def phase_diagram_theta_time(params: ModelParams, theta_grid, time_grid=None,
                             opts: EdgeOptions = None, with_stopping: bool = True) -> PhaseDiagramTT:
    times = default_time_grid() if time_grid is None else np.asarray(time_grid, dtype=float)
    thetas = np.asarray(theta_grid, dtype=float)
    if thetas.size == 0 or times.size < 2:
        raise ValueError("theta grid must be nonempty and the time grid needs >= 2 points")
    boundary = theta_c_curve(params, times, opts)
    n = len(thetas)
    out = dict(t1=np.full(n, np.nan), t2=np.full(n, np.nan), t_opt=np.full(n, np.nan),
               q_max=np.full(n, np.nan))
    regime, status = [], []
    for i, th in enumerate(thetas):
        try:
            rep = classify_regime(params.with_theta(th), (times[0], times[-1]), len(times),
                                  opts, with_stopping=with_stopping)
        except Exception as exc:  # noqa: BLE001
            regime.append("error")
            status.append(f"error: {exc}")
            continue
        regime.append(rep.regime)
        status.append("ok")
        for key in out:
            v = getattr(rep, key)
            if v is not None:
                out[key][i] = v
    return PhaseDiagramTT(thetas, times, boundary, regime, status=status, **out)


@dataclass
class PhaseDiagramTL:
    theta_grid: np.ndarray
    lambda_grid: np.ndarray
    labels: np.ndarray  # shape (n_theta, n_lambda), dtype object
    status: np.ndarray
    t1: np.ndarray = field(default=None)
    t2: np.ndarray = field(default=None)

    def rows(self):
        for i, th in enumerate(self.theta_grid):
            for j, lm in enumerate(self.lambda_grid):
                yield float(th), float(lm), self.labels[i, j], self.status[i, j]

    def counts(self) -> dict:
        keys, n = np.unique(self.labels.astype(str), return_counts=True)
        return {str(k): int(c) for k, c in zip(keys, n)}


def _tl_column(args):
    gamma, alpha, lam, thetas, window, grid_size, refine, opts = args
    base = ModelParams(gamma=gamma, alpha=alpha, lambda_minus=lam)
    labels, status, t1, t2 = [], [], [], []
    for th in thetas:
        try:
            rep = classify_regime(base.with_theta(th), window, grid_size, opts,
                                  with_stopping=False, refine=refine)
        except Exception as exc:  # noqa: BLE001
            labels.append("error")
            status.append(f"error: {exc}")
            t1.append(np.nan)
            t2.append(np.nan)
            continue
        labels.append(rep.regime)
        status.append("ok")
        t1.append(np.nan if rep.t1 is None else rep.t1)
        t2.append(np.nan if rep.t2 is None else rep.t2)
    return labels, status, t1, t2


def phase_diagram_theta_lambda(gamma: float, alpha: float, theta_grid, lambda_grid,
                               time_window=DEFAULT_WINDOW, grid_size: int = N_TIMES,
                               refine: bool = True, workers: int = 1,
                               opts: EdgeOptions = None) -> PhaseDiagramTL:
    thetas = np.asarray(theta_grid, dtype=float)
    lams = np.asarray(lambda_grid, dtype=float)
    if np.any(lams <= 0) or np.any(lams > 1):
        raise ValueError("lambda_minus grid must lie in (0, 1]")
    jobs = [(gamma, alpha, float(lm), tuple(thetas), tuple(time_window), grid_size, refine,
             opts) for lm in lams]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(_tl_column, jobs))
    else:
        cols = [_tl_column(j) for j in jobs]
    shape = (len(thetas), len(lams))
    labels = np.empty(shape, dtype=object)
    status = np.empty(shape, dtype=object)
    t1 = np.full(shape, np.nan)
    t2 = np.full(shape, np.nan)
    for j, (lab, st, a, b) in enumerate(cols):
        labels[:, j] = lab
        status[:, j] = st
        t1[:, j] = a
        t2[:, j] = b
    return PhaseDiagramTL(thetas, lams, labels, status, t1, t2)
