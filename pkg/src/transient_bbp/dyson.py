"""Block Dyson (quadratic vector) equation: solver, density inversion, bulk edges.

Convention: ``g_p(z)`` is the block average of the diagonal of ``(z - S)^{-1}``,
so ``g_p ~ 1/z`` at infinity, ``Im g_p < 0`` on the upper half-plane and the
density is ``-Im(sum_p alpha_p g_p) / pi``. Each block satisfies

    g_p = 1 / (z - sum_q alpha_q sigma_pq g_q).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DysonConvergenceError,
    DysonDomainError,
    EdgeDetectionError,
    InvalidArgumentError,
    SingularityError,
)
from .model import ModelParams, VarianceProfile, variance_profile

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
DEFAULT_EPSILON = 1e-2
EDGE_EPSILON = 1e-6
EDGE_THRESHOLD = 1e-4

# imaginary part at which the fixed-point iteration is started before
# continuing down to the requested height with Newton steps
_LADDER_TOP = 1.0
_LADDER_FACTOR = 10.0
# real-axis mode: fixed-point budget before switching to continuation
_REAL_ITER = 400
_REAL_LIFT = 1e-10


@dataclass
class PartialTransforms:
    g: np.ndarray
    z: complex
    residual: float


@dataclass
class DensityCurve:
    grid: np.ndarray
    rho: np.ndarray
    epsilon: float
    t: float
    params: ModelParams


@dataclass
class BulkEdges:
    lower: float
    upper: float
    threshold: float
    grid_step: float


def averaged(profile: VarianceProfile, g) -> np.ndarray:
    """Weighted block average sum_p alpha_p g_p along the last axis."""
    return np.asarray(g) @ np.asarray(profile.weights)


# ---------------------------------------------------------------------------
# batched core


def _map(K, z, g):
    return 1.0 / (z[:, None] - g @ K.T)


def _residual(K, z, g):
    with np.errstate(all="ignore"):
        r = np.max(np.abs(g - _map(K, z, g)), axis=1)
    return np.where(np.isfinite(r), r, np.inf)


def _stable(K, g):
    """Spectral radius of diag(g^2) K below one (physical real-axis branch)."""
    B = (g.real**2)[:, :, None] * K[None, :, :]
    if B.shape[1] == 1:
        return np.abs(B[:, 0, 0]) < 1.0
    return np.max(np.abs(np.linalg.eigvals(B)), axis=1) < 1.0


def _on_branch(K, z, g):
    ok = np.all(np.isfinite(g), axis=1)
    upper = z.imag > 0
    # Im g_p <= 0 on C+, allowing rounding noise far outside the support
    scale = 1e-13 * np.max(np.abs(g), axis=1)
    ok_upper = np.all(g.imag <= scale[:, None], axis=1)
    ok &= np.where(upper, ok_upper, True)
    real = ~upper
    if np.any(real & ok):
        idx = np.flatnonzero(real & ok)
        ok[idx] = _stable(K, g[idx])
    return ok


def _newton(K, z, g, tol, steps=25):
    n = K.shape[0]
    eye = np.eye(n)
    g = g.copy()
    with np.errstate(all="ignore"):
        for _ in range(steps):
            u = z[:, None] - g @ K.T
            F = g * u - 1.0
            J = u[:, :, None] * eye[None] - g[:, :, None] * K[None]
            try:
                delta = np.linalg.solve(J, F[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                delta = np.einsum("mij,mj->mi", np.linalg.pinv(J), F)
            g = g - delta
            bad = ~np.isfinite(g)
            if np.any(bad):
                g[bad] = np.nan
            fmax = np.max(np.abs(g * (z[:, None] - g @ K.T) - 1.0), axis=1)
            if np.all((fmax < 1e-14) | ~np.isfinite(fmax)):
                break
    res = _residual(K, z, g)
    ok = (res <= tol) & _on_branch(K, z, g)
    return g, res, ok


def _iterate(K, z, g, tol, max_iter, damping):
    """Damped fixed-point iteration with periodic Newton acceleration.

    Returns (g, residual, converged).
    """
    m = len(z)
    g = g.astype(complex, copy=True)
    res = _residual(K, z, g)
    done = (res <= tol) & _on_branch(K, z, g)
    damp = np.full(m, float(damping))
    ref_res = res.copy()
    next_newton = 8
    it = 0
    while it < max_iter and not np.all(done):
        act = np.flatnonzero(~done)
        za = z[act]
        ga = g[act]
        with np.errstate(all="ignore"):
            cand = _map(K, za, ga)
        d = damp[act][:, None]
        ga = (1.0 - d) * ga + d * cand
        g[act] = ga
        it += 1
        if it % 50 == 0:
            ra = _residual(K, za, ga)
            # non-monotone residual over the last window: fall back to damping
            osc = ra > ref_res[act]
            damp[act[osc]] = np.minimum(damp[act[osc]], 0.5)
            ref_res[act] = ra
        if it >= next_newton:
            next_newton = int(next_newton * 1.6) + 4
            gn, rn, okn = _newton(K, za, ga, tol)
            g[act[okn]] = gn[okn]
            done[act[okn]] = True
            if np.all(done):
                break
        ra = _residual(K, za, g[act])
        conv = ra <= tol
        if np.any(conv):
            idx = act[conv]
            done[idx] = _on_branch(K, z[idx], g[idx])
    res = _residual(K, z, g)
    return g, res, done


def _ladder(z, top=_LADDER_TOP, factor=_LADDER_FACTOR):
    """Imaginary heights descending from ``top`` to Im z."""
    eta = float(np.min(z.imag))
    if eta >= top:
        return [None]
    levels = []
    h = top
    while h > eta * factor:
        levels.append(h)
        h /= factor
    levels.append(None)
    return levels


def _ladder_solve(K, z, tol, max_iter, damping):
    n = K.shape[0]
    g = None
    for h in _ladder(z):
        zl = z if h is None else z.real + 1j * np.maximum(h, z.imag)
        if g is None:
            start = np.repeat((1.0 / zl)[:, None], n, axis=1)
            g, res, ok = _iterate(K, zl, start, tol, max_iter, damping)
            continue
        gn, rn, okn = _newton(K, zl, g, tol)
        g = np.where(okn[:, None], gn, g)
        res = np.where(okn, rn, res)
        ok = okn.copy()
        if not np.all(okn):
            bad = np.flatnonzero(~okn)
            gb, rb, okb = _iterate(K, zl[bad], g[bad], tol, max_iter, damping)
            g[bad], res[bad], ok[bad] = gb, rb, okb
    return g, res, ok


def solve_batch(profile: VarianceProfile, z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                damping=1.0, g0=None):
    """Solve the Dyson system at many spectral points at once.

    Points with ``Im z > 0`` are solved by continuation from a large imaginary
    part; real points are iterated directly. Returns ``(g, residual, ok)``
    with ``g`` of shape (len(z), n_blocks).
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    K = profile.weighted
    n = K.shape[0]
    g = np.empty((len(z), n), dtype=complex)
    res = np.full(len(z), np.inf)
    ok = np.zeros(len(z), dtype=bool)

    real = z.imag == 0
    if np.any(real):
        zr = z[real]
        start = np.repeat((1.0 / zr)[:, None], n, axis=1) if g0 is None else g0[real]
        gr, rr, okr = _iterate(K, zr, start, tol, min(max_iter, _REAL_ITER), damping)
        bad = np.flatnonzero(~okr)
        if len(bad):
            # slow near an edge: continue from just above the axis, then a real Newton
            gl, _, _ = _ladder_solve(K, zr[bad] + 1j * _REAL_LIFT, tol, max_iter, damping)
            gn, rn, okn = _newton(K, zr[bad], gl.real + 0j, tol)
            gr[bad], rr[bad], okr[bad] = gn, rn, okn
        g[real], res[real], ok[real] = gr.real + 0j, rr, okr

    cplx = np.flatnonzero(~real)
    if len(cplx):
        zc = z[cplx]
        gc = np.empty((len(cplx), n), dtype=complex)
        rc = np.full(len(cplx), np.inf)
        okc = np.zeros(len(cplx), dtype=bool)
        if g0 is not None:
            # warm start: plain Newton, anything that fails goes through the ladder
            gn, rn, okn = _newton(K, zc, np.asarray(g0, dtype=complex)[cplx], tol)
            gc[okn], rc[okn], okc[okn] = gn[okn], rn[okn], True
        todo = np.flatnonzero(~okc)
        if len(todo):
            gl, rl, okl = _ladder_solve(K, zc[todo], tol, max_iter, damping)
            gc[todo], rc[todo], okc[todo] = gl, rl, okl
        g[cplx], res[cplx], ok[cplx] = gc, rc, okc
    return g, res, ok


def solve_dyson(profile: VarianceProfile, z, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                damping=1.0) -> PartialTransforms:
    """Partial Stieltjes transforms at ``z`` (scalar or array, Im z >= 0).

    ``g`` has shape (n_blocks,) for scalar input, (len(z), n_blocks) otherwise.
    """
    scalar = np.ndim(z) == 0
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(zs.imag < 0):
        raise InvalidArgumentError("solve_dyson needs Im z >= 0")
    g, res, ok = solve_batch(profile, zs, tol=tol, max_iter=max_iter, damping=damping)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        zi = zs[i]
        if zi.imag == 0:
            raise DysonDomainError(
                f"no stable real solution at z={zi.real:.6g}: point lies in the bulk "
                f"or too close to an edge (residual {res[i]:.3g})"
            )
        raise DysonConvergenceError(
            f"Dyson solve did not converge at z={zi} (residual {res[i]:.3g})",
            residual=float(res[i]), z=zi,
        )
    if scalar:
        return PartialTransforms(g=g[0], z=zs[0], residual=float(res[0]))
    return PartialTransforms(g=g, z=zs, residual=float(np.max(res)))


def solve_real(profile: VarianceProfile, x, tol=DEFAULT_TOL, max_iter=20_000) -> np.ndarray:
    """Real-axis solutions at points outside the support, shape (len(x), n)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g, res, ok = solve_batch(profile, x.astype(complex), tol=tol, max_iter=max_iter)
    if not np.all(ok):
        bad = x[~ok]
        raise DysonDomainError(
            f"no stable real solution at x={bad[0]:.10g}: point lies in the bulk "
            "or too close to an edge"
        )
    return g.real


def stability_radius(profile: VarianceProfile, g) -> np.ndarray:
    """Perron root of diag(g^2) K for real solutions; reaches 1 at a spectral edge."""
    g = np.atleast_2d(np.asarray(g).real)
    B = (g**2)[:, :, None] * profile.weighted[None]
    return np.max(np.abs(np.linalg.eigvals(B)), axis=1)


def _first_real_point(profile, edge, direction, start=1e-6, factor=4.0, tries=10):
    x = edge + direction * start * factor ** np.arange(tries)
    _, _, ok = solve_batch(profile, x, max_iter=2000)
    if not np.any(ok):
        raise EdgeDetectionError(
            f"no real-axis solution found beyond the edge estimate {edge:.6g}"
        )
    return float(x[np.flatnonzero(ok)[0]])


def polish_edge(profile: VarianceProfile, estimate: float, direction: int = +1,
                passes: int = 3) -> float:
    """Locate the support edge near ``estimate`` from the real-axis side.

    Near a square-root edge (1 - r)^2 is linear in the distance to the edge,
    r being the stability radius; a quadratic fit of (1 - r)^2 over three
    points outside the support is extrapolated to zero.
    """
    x0 = _first_real_point(profile, estimate, direction)
    span = abs(x0 - estimate) + 1e-6
    edge = estimate
    for _ in range(passes):
        xs = x0 + direction * span * np.array([0.0, 1.0, 2.0])
        g = solve_real(profile, xs)
        y = (1.0 - stability_radius(profile, g)) ** 2
        c2, c1, c0 = np.polyfit(xs - x0, y, 2)
        roots = np.roots([c2, c1, c0]) if abs(c2) > 0 else np.array([-c0 / c1])
        roots = roots[np.isreal(roots)].real
        behind = roots[roots * direction <= 0]
        if behind.size == 0:
            break
        u = behind[np.argmin(np.abs(behind))]
        edge = x0 + u
        gap = abs(u)
        # next pass: sample closer to the edge estimate
        x_new = edge + direction * max(gap * 1e-2, 1e-9 * (1 + abs(edge)))
        try:
            solve_real(profile, [x_new])
        except DysonDomainError:
            break
        x0 = x_new
        span = max(abs(x0 - edge), 1e-7)
    return float(edge)


def dyson_derivative(profile: VarianceProfile, z, g) -> np.ndarray:
    """dg_p/dz from (I - diag(g^2) K) g' = -g^2, K_pq = alpha_q sigma_pq."""
    if isinstance(g, PartialTransforms):
        g = g.g
    g = np.asarray(g)
    K = profile.weighted
    batched = g.ndim == 2
    G = np.atleast_2d(g)
    A = np.eye(K.shape[0])[None] - (G**2)[:, :, None] * K[None]
    cond = np.linalg.cond(A)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e14):
        raise SingularityError("stability operator is singular (spectral edge)")
    out = np.linalg.solve(A, -(G**2)[:, :, None])[:, :, 0]
    return out if batched else out[0]


# ---------------------------------------------------------------------------
# density and edges


def _density_solve(profile, grid, epsilon, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, g0=None):
    grid = np.asarray(grid, dtype=float)
    z = grid + 1j * epsilon
    g, res, ok = solve_batch(profile, z, tol=tol, max_iter=max_iter, g0=g0)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        raise DysonConvergenceError(
            f"Dyson solve failed at grid point lambda={grid[i]:.6g} "
            f"(residual {res[i]:.3g})",
            residual=float(res[i]), z=z[i],
        )
    return np.abs(averaged(profile, g).imag) / math.pi, g


def density_from_profile(profile: VarianceProfile, grid, epsilon=DEFAULT_EPSILON,
                         tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> np.ndarray:
    return _density_solve(profile, grid, epsilon, tol, max_iter)[0]


def spectral_density(params: ModelParams, t: float, grid, epsilon=DEFAULT_EPSILON,
                     tol=DEFAULT_TOL) -> DensityCurve:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidArgumentError("grid must be a nonempty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("grid must be strictly increasing")
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be > 0")
    rho = density_from_profile(variance_profile(params, t), grid, epsilon, tol)
    return DensityCurve(grid=grid, rho=rho, epsilon=float(epsilon), t=float(t), params=params)


def support_bound(profile: VarianceProfile) -> float:
    return 2.0 * math.sqrt(profile.sigma_max) + 1.0


def profile_edges(profile: VarianceProfile, epsilon=EDGE_EPSILON, threshold=EDGE_THRESHOLD,
                  coarse_step=None, refine_iters=60) -> BulkEdges:
    bound = support_bound(profile)
    step = coarse_step if coarse_step is not None else 1e-3 * 2 * bound
    grid = np.arange(-bound, bound + 0.5 * step, step)
    rho, g = _density_solve(profile, grid, epsilon)
    above = np.flatnonzero(rho > threshold)
    if above.size == 0:
        raise EdgeDetectionError(
            f"density never exceeds threshold {threshold:g} on [-{bound:.3g}, {bound:.3g}]"
        )
    i0, i1 = above[0], above[-1]
    if i0 == 0 or i1 == len(grid) - 1:
        raise EdgeDetectionError("density above threshold at the scan boundary")
    # bracket [outside, inside] for each edge; bisect both together
    out = np.array([grid[i0 - 1], grid[i1 + 1]])
    ins = np.array([grid[i0], grid[i1]])
    g_ins = g[[i0, i1]]
    for _ in range(refine_iters):
        if np.max(np.abs(ins - out)) < 1e-10 * bound:
            break
        mid = 0.5 * (out + ins)
        rm, gm = _density_solve(profile, mid, epsilon, g0=g_ins)
        hit = rm > threshold
        ins = np.where(hit, mid, ins)
        g_ins = np.where(hit[:, None], gm, g_ins)
        out = np.where(hit, out, mid)
    lower, upper = 0.5 * (out + ins)
    return BulkEdges(lower=float(lower), upper=float(upper), threshold=float(threshold),
                     grid_step=float(step))


def bulk_edges(params: ModelParams, t: float, epsilon=EDGE_EPSILON, threshold=EDGE_THRESHOLD,
               coarse_step=None, refine_iters=60) -> BulkEdges:
    return profile_edges(variance_profile(params, t), epsilon, threshold, coarse_step,
                         refine_iters)
