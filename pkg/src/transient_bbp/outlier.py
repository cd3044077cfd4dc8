"""Rank-two teacher perturbation: outlier equation, thresholds, regimes, overlap.

The teacher enters the symmetrized weight matrix as ``theta (v w^T + w v^T)``
with ``w_p = f_p v_p`` blockwise. Everything reduces to three real quadratic
forms evaluated outside the bulk,

    phi = sum_p alpha_p g_p,  psi = sum_p alpha_p f_p g_p,  chi = sum_p alpha_p f_p^2 g_p,

and the outlier determinant ``D(z) = (1 - theta psi)^2 - theta^2 phi chi``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import dyson
from .errors import (
    DegenerateRootError,
    DysonDomainError,
    InvalidArgumentError,
    ResolutionError,
)
from .model import ModelParams, VarianceProfile, variance_profile

log = logging.getLogger(__name__)

REAL_AXIS_MARGIN = 1e-6
EDGE_DELTAS = (4e-3, 2e-3, 1e-3, 5e-4)
ROOT_XTOL = 1e-10
TIME_RTOL = 1e-4
DEFAULT_WINDOW = (0.05, 3000.0)


@dataclass(frozen=True)
class EdgeOptions:
    epsilon: float = dyson.EDGE_EPSILON
    threshold: float = dyson.EDGE_THRESHOLD
    coarse_step: Optional[float] = None
    refine_iters: int = 60


@dataclass
class QuadraticForms:
    phi: float
    psi: float
    chi: float
    z: float
    t: float


@dataclass
class OutlierResult:
    exists: bool
    xi: Optional[float] = None
    side: Optional[str] = None
    margin: Optional[float] = None
    lower_xi: Optional[float] = None


@dataclass
class RegimeReport:
    regime: str
    t1: Optional[float] = None
    t2: Optional[float] = None
    t_opt: Optional[float] = None
    q_max: Optional[float] = None
    multimodal: bool = False
    times: np.ndarray = field(default=None, repr=False)
    discriminant: np.ndarray = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# quadratic forms


def _forms(profile: VarianceProfile, g):
    w = np.asarray(profile.weights)
    f = np.asarray(profile.learned)
    g = np.asarray(g)
    return g @ w, g @ (w * f), g @ (w * f * f)


@dataclass(frozen=True)
class EdgeState:
    """Time-slice data shared by every theta: profile, bulk edges, edge forms."""

    profile: VarianceProfile
    lower: float
    upper: float
    phi: float
    psi: float
    chi: float
    # cubic fits of (phi, psi, chi) in s = sqrt(z - upper), rows = form
    fit: tuple

    def forms_near_edge(self, delta):
        s = math.sqrt(delta)
        return tuple(float(np.polyval(c[::-1], s)) for c in self.fit)


def _richardson_fit(profile: VarianceProfile, upper: float):
    """Cubic in s = sqrt(delta) through the edge offsets; the constant term is the edge value."""
    x = upper + np.asarray(EDGE_DELTAS)
    g = dyson.solve_real(profile, x)
    phi, psi, chi = _forms(profile, g)
    s = np.sqrt(np.asarray(EDGE_DELTAS))
    V = np.vander(s, len(s), increasing=True)
    fit = tuple(tuple(np.linalg.solve(V, y)) for y in (phi, psi, chi))
    return fit


@functools.lru_cache(maxsize=8192)
def _edge_state_cached(gamma, alpha, lambda_minus, t, opts: EdgeOptions) -> EdgeState:
    params = ModelParams(gamma=gamma, alpha=alpha, lambda_minus=lambda_minus)
    profile = variance_profile(params, t)
    edges = dyson.profile_edges(profile, opts.epsilon, opts.threshold, opts.coarse_step,
                                opts.refine_iters)
    # the threshold crossing sits inside wide bulks; anchor on the actual support edge
    upper = dyson.polish_edge(profile, edges.upper, +1)
    lower = dyson.polish_edge(profile, edges.lower, -1)
    fit = _richardson_fit(profile, upper)
    phi, psi, chi = (c[0] for c in fit)
    return EdgeState(profile, lower, upper, phi, psi, chi, fit)


def edge_state(params: ModelParams, t: float, opts: EdgeOptions = None) -> EdgeState:
    return _edge_state_cached(params.gamma, params.alpha, params.lambda_minus, float(t),
                              opts or EdgeOptions())


def quadratic_forms(params: ModelParams, t: float, z: float,
                    margin: float = REAL_AXIS_MARGIN, opts: EdgeOptions = None) -> QuadraticForms:
    st = edge_state(params, t, opts)
    z = float(z)
    if st.lower - margin < z < st.upper + margin:
        raise DysonDomainError(
            f"z={z:.6g} is not outside the bulk [{st.lower:.6g}, {st.upper:.6g}]"
        )
    g = dyson.solve_real(st.profile, [z])
    phi, psi, chi = _forms(st.profile, g)
    return QuadraticForms(float(phi[0]), float(psi[0]), float(chi[0]), z, float(t))


# ---------------------------------------------------------------------------
# thresholds


def critical_theta(params: ModelParams, t: float, opts: EdgeOptions = None) -> float:
    st = edge_state(params, t, opts)
    denom = st.psi + math.sqrt(max(st.phi * st.chi, 0.0))
    if denom <= 0:
        return math.inf
    return 1.0 / denom


def edge_discriminant(params: ModelParams, t: float, opts: EdgeOptions = None) -> float:
    st = edge_state(params, t, opts)
    th = params.theta
    return (1.0 - th * st.psi) ** 2 - th * th * st.phi * st.chi


# ---------------------------------------------------------------------------
# outlier location


def _upper_factor(profile, theta, z):
    phi, psi, chi = _forms(profile, dyson.solve_real(profile, np.atleast_1d(z)))
    return 1.0 - theta * (psi + np.sqrt(np.maximum(phi * chi, 0.0)))


def _lower_factor(profile, theta, z):
    phi, psi, chi = _forms(profile, dyson.solve_real(profile, np.atleast_1d(z)))
    # below the bulk phi, psi, chi < 0, so sqrt(phi chi) = -sqrt-branch of the factorization
    return 1.0 - theta * psi - theta * np.sqrt(np.maximum(phi * chi, 0.0))


def _real_start(profile, edge, direction, margin):
    """Closest point to the edge (beyond ``margin``) where the real solve succeeds."""
    d = margin
    for _ in range(8):
        z = edge + direction * d
        try:
            dyson.solve_real(profile, [z])
            return z
        except DysonDomainError:
            d *= 10.0
    raise DysonDomainError(f"cannot reach the real axis near the edge {edge:.6g}")


def _near_edge_root(st: EdgeState, theta: float, delta_max: float):
    """Root of the upper factor between the edge and ``delta_max`` from the local fit."""

    def h(s):
        phi, psi, chi = st.forms_near_edge(s * s)
        return 1.0 - theta * (psi + math.sqrt(max(phi * chi, 0.0)))

    s_hi = math.sqrt(delta_max)
    if h(0.0) < 0 <= h(s_hi):
        s = brentq(h, 0.0, s_hi, xtol=1e-14)
        return st.upper + s * s
    return st.upper + delta_max


def outlier_location(params: ModelParams, t: float, opts: EdgeOptions = None,
                     margin: float = REAL_AXIS_MARGIN) -> OutlierResult:
    theta = params.theta
    if theta == 0:
        return OutlierResult(exists=False)
    st = edge_state(params, t, opts)
    prof = st.profile
    span = 2.0 * theta * (1.0 + max(prof.learned)) + 10.0
    upper_xi = None
    z_lo = _real_start(prof, st.upper, +1.0, margin)
    z_hi = st.upper + span
    h_lo = float(_upper_factor(prof, theta, z_lo)[0])
    theta_c = critical_theta(params, t, opts)
    if h_lo < 0:
        if _upper_factor(prof, theta, z_hi)[0] <= 0:
            raise ResolutionError("upper outlier beyond the search bracket")
        upper_xi = brentq(lambda z: _upper_factor(prof, theta, z)[0], z_lo, z_hi,
                          xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)
    elif theta > theta_c:
        # root closer to the edge than the real-axis margin: use the local expansion
        upper_xi = _near_edge_root(st, theta, z_lo - st.upper)

    lower_xi = _lower_outlier(st, theta, span, margin)

    if upper_xi is not None:
        return OutlierResult(True, float(upper_xi), "upper", float(upper_xi - st.upper),
                             lower_xi)
    if lower_xi is not None:
        return OutlierResult(True, float(lower_xi), "lower", float(st.lower - lower_xi),
                             lower_xi)
    return OutlierResult(exists=False)


def _lower_outlier(st: EdgeState, theta: float, span: float, margin: float):
    prof = st.profile
    try:
        z_top = _real_start(prof, st.lower, -1.0, margin)
    except DysonDomainError:
        return None
    # distances from the lower edge, dense near the edge
    d = np.geomspace(st.lower - z_top, span, 200)
    z = st.lower - d
    h = _lower_factor(prof, theta, z)
    neg = h < 0
    if not np.any(neg):
        return None
    # outermost (most negative z) sign change
    k = int(np.flatnonzero(neg)[-1])
    if k == len(z) - 1:
        raise ResolutionError("lower outlier beyond the search bracket")
    return float(brentq(lambda x: _lower_factor(prof, theta, x)[0], z[k + 1], z[k],
                        xtol=ROOT_XTOL))


# ---------------------------------------------------------------------------
# overlap


def overlap_theory(params: ModelParams, t: float, opts: EdgeOptions = None,
                   outlier: OutlierResult = None) -> float:
    """Squared overlap of the upper outlier eigenvector with the teacher.

    Residue of v^T (z - S^theta)^{-1} v = phi + N/D at the outlier, with
    D = phi chi - (1/theta - psi)^2 and N = -(chi phi^2 + 2 (1/theta - psi) phi psi + phi psi^2).
    """
    if outlier is None:
        outlier = outlier_location(params, t, opts)
    if not outlier.exists or outlier.side != "upper":
        return 0.0
    if outlier.margin < REAL_AXIS_MARGIN:
        # eigenvector delocalized at the edge: q ~ sqrt(margin)
        return 0.0
    st = edge_state(params, t, opts)
    prof = st.profile
    xi = outlier.xi
    g = dyson.solve_real(prof, [xi])[0]
    dg = dyson.dyson_derivative(prof, xi, g)
    phi, psi, chi = _forms(prof, g)
    dphi, dpsi, dchi = _forms(prof, dg)
    r = 1.0 / params.theta - psi
    num = -(chi * phi**2 + 2.0 * r * phi * psi + phi * psi**2)
    dD = dphi * chi + phi * dchi + 2.0 * r * dpsi
    if abs(dD) < 1e-12:
        raise DegenerateRootError(f"outlier root at xi={xi:.6g} is not simple")
    q = float(num / dD)
    qc = min(max(q, 0.0), 1.0)
    if abs(q - qc) > 1e-8:
        raise DegenerateRootError(f"overlap {q:.6g} outside [0, 1]")
    return qc


# ---------------------------------------------------------------------------
# regimes and stopping


def refine_transition(params: ModelParams, bracket, opts: EdgeOptions = None,
                      rtol: float = TIME_RTOL) -> float:
    """Transition time inside ``bracket`` where the edge discriminant changes sign."""
    t_lo, t_hi = map(float, bracket)
    if not 0 < t_lo < t_hi:
        raise InvalidArgumentError(f"invalid bracket ({t_lo}, {t_hi})")
    f_lo = edge_discriminant(params, t_lo, opts)
    f_hi = edge_discriminant(params, t_hi, opts)
    if f_lo * f_hi >= 0:
        raise InvalidArgumentError(
            f"discriminant does not change sign on ({t_lo:.6g}, {t_hi:.6g})"
        )
    # bracketed root search in log-time, so xtol is a relative tolerance in t
    u = brentq(lambda s: edge_discriminant(params, math.exp(s), opts),
               math.log(t_lo), math.log(t_hi), xtol=rtol)
    return math.exp(u)


def classify_regime(params: ModelParams, t_range=DEFAULT_WINDOW, grid_size: int = 60,
                    opts: EdgeOptions = None, with_stopping: bool = True,
                    refine: bool = True) -> RegimeReport:
    """Weak / persistent / transient from the sign pattern of the edge discriminant.

    With ``refine=False`` transition times are reported as the grid midpoints
    (geometric) of the bracketing cells and no stopping time is computed.
    """
    t_min, t_max = map(float, t_range)
    if not 0 < t_min < t_max:
        raise InvalidArgumentError(f"need 0 < t_min < t_max, got {t_range}")
    times = np.geomspace(t_min, t_max, grid_size)
    F = np.array([edge_discriminant(params, t, opts) for t in times])
    neg = F < 0
    if neg[0]:
        # at t -> 0 the teacher term vanishes and F -> 1; look further left for t1
        t_left = t_min
        for _ in range(12):
            t_left /= 10.0
            if edge_discriminant(params, t_left, opts) >= 0:
                break
        else:
            raise ResolutionError("outlier present down to t ~ 1e-12 * t_min")
        times = np.concatenate([[t_left], times])
        F = np.concatenate([[edge_discriminant(params, t_left, opts)], F])
        neg = F < 0
    flips = np.flatnonzero(neg[1:] != neg[:-1])
    if len(flips) == 0:
        return RegimeReport("weak", times=times, discriminant=F)
    if len(flips) > 2:
        raise ResolutionError(
            f"{len(flips)} sign changes of the edge discriminant; refine the time grid"
        )
    if refine:
        crossings = [refine_transition(params, (times[i], times[i + 1]), opts) for i in flips]
    else:
        crossings = [math.sqrt(times[i] * times[i + 1]) for i in flips]
        with_stopping = False
    if len(flips) == 1:
        rep = RegimeReport("persistent", t1=crossings[0], times=times, discriminant=F)
        window = (rep.t1, t_max)
    else:
        rep = RegimeReport("transient", t1=crossings[0], t2=crossings[1], times=times,
                           discriminant=F)
        window = (rep.t1, rep.t2)
    if with_stopping:
        rep.t_opt, rep.q_max, rep.multimodal = optimal_stopping(params, window, opts)
    return rep


def _golden_max(f, a, b, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def optimal_stopping(params: ModelParams, window, opts: EdgeOptions = None,
                     n_scan: int = 64, rtol: float = 1e-3):
    """Maximize the theoretical overlap over ``window``; returns (t_opt, q_max, multimodal)."""
    t1, t2 = map(float, window)
    if not 0 <= t1 < t2:
        raise InvalidArgumentError(f"empty stopping window ({t1}, {t2})")
    lo = max(t1, 1e-12)
    grid = np.geomspace(lo, t2, n_scan + 2)[1:-1]

    def q_of(u):
        return overlap_theory(params, math.exp(u), opts)

    q = np.array([q_of(math.log(t)) for t in grid])
    i = int(np.argmax(q))
    inner = q[1:-1]
    peaks = np.flatnonzero((inner > q[:-2]) & (inner >= q[2:]) & (inner > 1e-6 * q[i]))
    multimodal = len(peaks) > 1
    if multimodal:
        log.warning("overlap curve has %d local maxima on the scan grid", len(peaks))
    a = math.log(grid[i - 1]) if i > 0 else math.log(lo)
    b = math.log(grid[i + 1]) if i < len(grid) - 1 else math.log(t2)
    u, qm = _golden_max(q_of, a, b, rtol)
    if q[i] > qm:
        u, qm = math.log(grid[i]), q[i]
    return math.exp(u), float(qm), multimodal
