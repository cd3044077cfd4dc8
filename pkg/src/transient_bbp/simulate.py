"""Finite-size Monte Carlo of the gradient-flow weights in the covariance eigenbasis.

In the eigenbasis of XX^T the flow decouples column by column:

    A_t = A_init diag(a) + Z diag(c) + theta v (f * v)^T,

with a_i = exp(-t mu_i), c_i = (1 - exp(-t mu_i)) / lambda_i, f_i = 1 - exp(-t mu_i)
and mu_i = lambda_i^2. Directions in the null space of XX^T (gamma < 1) have
a = 1, c = f = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateBlockError, InvalidArgumentError
from .model import ModelParams


@dataclass(frozen=True)
class SimConfig:
    n: int
    params: ModelParams
    times: tuple
    n_realizations: int = 1
    seed: int = 0
    spectrum_kind: str = "two-block"
    beta: float = 1.5
    lambda_min: float = 0.1
    lambda_max: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if self.n < 32:
            raise InvalidArgumentError(f"n must be >= 32, got {self.n}")
        if self.n_realizations < 1:
            raise InvalidArgumentError("n_realizations must be >= 1")
        t = np.asarray(self.times)
        if t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("times must be nonempty, nonnegative, strictly increasing")
        if self.spectrum_kind not in ("two-block", "power-law"):
            raise InvalidArgumentError(f"unknown spectrum kind {self.spectrum_kind!r}")
        if self.spectrum_kind == "power-law" and not 0 < self.lambda_min < self.lambda_max:
            raise InvalidArgumentError("power-law needs 0 < lambda_min < lambda_max")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")

    @property
    def m(self) -> int:
        return max(1, int(round(self.params.gamma * self.n)))


@dataclass
class SpectrumSample:
    eigenvalues: np.ndarray
    top_overlap: float
    t: float
    realization_id: int
    seed_used: int


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    n_samples: int

    @property
    def mass(self) -> float:
        return float(np.sum(self.counts * np.diff(self.bin_edges)))


def realization_rng(seed: int, realization_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(realization_id)]))


def sample_goe(n: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Gaussian matrix, off-diagonal variance 1/n, diagonal variance 2/n."""
    x = rng.standard_normal((n, n)) / math.sqrt(n)
    return (x + x.T) / math.sqrt(2.0)


def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def powerlaw_singular_values(beta, lambda_min, lambda_max, n, seed=0, rng=None) -> np.ndarray:
    """Inverse-CDF draws from the density proportional to lambda^-beta on [lambda_min, lambda_max]."""
    if not 0 < lambda_min < lambda_max:
        raise InvalidArgumentError(f"need 0 < lambda_min < lambda_max, got ({lambda_min}, {lambda_max})")
    if rng is None:
        rng = np.random.default_rng(seed)
    u = rng.random(n)
    if beta == 1:
        x = lambda_min * (lambda_max / lambda_min) ** u
    else:
        k = 1.0 - beta
        lo, hi = lambda_min**k, lambda_max**k
        x = (lo + u * (hi - lo)) ** (1.0 / k)
    return np.clip(x, lambda_min, lambda_max)


def two_block_singular_values(config: SimConfig) -> np.ndarray:
    """Per-index singular values; ``inf`` marks null-space directions."""
    p = config.params
    n = config.n
    active = n if p.gamma >= 1 else min(config.m, n)
    n_fast = int(round(p.alpha * active))
    if n_fast in (0, active):
        raise DegenerateBlockError(
            f"block sizes ({n_fast}, {active - n_fast}) leave an empty block"
        )
    lam = np.empty(n)
    lam[:n_fast] = p.lambda_plus
    lam[n_fast:active] = p.lambda_minus
    lam[active:] = np.inf
    return lam


def flow_coefficients(lam: np.ndarray, t: float):
    """Column scalings (a, c, f) of the rotated flow at time t."""
    null = ~np.isfinite(lam)
    mu = np.where(null, 0.0, lam**2)
    f = -np.expm1(-t * mu)
    a = np.exp(-t * mu)
    c = np.where(null, 0.0, f / np.where(null, 1.0, lam))
    return a, c, f


def flow_matrix(a_init, noise, v, lam, t, theta) -> np.ndarray:
    """Symmetrized weights S_t = A_t + A_t^T in the covariance eigenbasis."""
    a, c, f = flow_coefficients(lam, t)
    A = a_init * a[None, :] + noise * c[None, :] + theta * np.outer(v, f * v)
    return A + A.T


def _spectrum(S, v, full=True):
    if full:
        w, U = np.linalg.eigh(S)
        u = U[:, -1]
    else:
        n = S.shape[0]
        w, U = scipy.linalg.eigh(S, subset_by_index=[n - 1, n - 1])
        u = U[:, 0]
    return w, float(np.dot(u, v) ** 2)


def _draw(config: SimConfig, realization_id: int):
    rng = realization_rng(config.seed, realization_id)
    n, m = config.n, config.m
    if config.spectrum_kind == "two-block":
        lam = two_block_singular_values(config)
    else:
        lam = powerlaw_singular_values(config.beta, config.lambda_min, config.lambda_max, n,
                                       rng=rng)
    a_init = sample_goe(n, rng)
    noise = rng.standard_normal((n, n)) / math.sqrt(m)
    v = sample_sphere(n, rng)
    return lam, a_init, noise, v


def _sample(config, realization_id, full=True):
    lam, a_init, noise, v = _draw(config, realization_id)
    out = []
    for t in config.times:
        S = flow_matrix(a_init, noise, v, lam, t, config.params.theta)
        w, q = _spectrum(S, v, full)
        out.append(SpectrumSample(w, q, t, realization_id, int(config.seed)))
    return out


def sample_two_block(config: SimConfig, realization_id: int = 0) -> list:
    if config.spectrum_kind != "two-block":
        raise InvalidArgumentError("sample_two_block needs spectrum_kind='two-block'")
    return _sample(config, realization_id)


def sample_powerlaw_flow(config: SimConfig, realization_id: int = 0) -> list:
    if config.spectrum_kind != "power-law":
        raise InvalidArgumentError("sample_powerlaw_flow needs spectrum_kind='power-law'")
    return _sample(config, realization_id)


def sample_original_basis(config: SimConfig, realization_id: int = 0) -> list:
    """Same ensemble built from explicit X = U diag(lambda) V^T and the closed-form flow.

    Only used to check the rotated-basis shortcut; requires gamma >= 1.
    """
    p = config.params
    if p.gamma < 1:
        raise InvalidArgumentError("original-basis mode requires gamma >= 1")
    rng = realization_rng(config.seed, realization_id)
    n, m = config.n, config.m
    lam = two_block_singular_values(config)
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((m, n)))
    X = (U * lam[None, :]) @ V.T
    a_init = sample_goe(n, rng)
    Z = rng.standard_normal((n, m)) / math.sqrt(m)
    v = sample_sphere(n, rng)
    Y = p.theta * np.outer(v, v) @ X + Z
    # X^T (X X^T)^{-1} = V diag(1/lambda) U^T
    ls = Y @ (V * (1.0 / lam)[None, :]) @ U.T
    out = []
    for t in config.times:
        decay = (U * np.exp(-t * lam**2)[None, :]) @ U.T
        A = a_init @ decay + ls @ (np.eye(n) - decay)
        w, q = _spectrum(A + A.T, v)
        out.append(SpectrumSample(w, q, t, realization_id, int(config.seed)))
    return out


def run_ensemble(config: SimConfig, sampler=None) -> list:
    """All realizations; returns a list (per realization) of per-time samples."""
    if sampler is None:
        sampler = sample_two_block if config.spectrum_kind == "two-block" else sample_powerlaw_flow
    return [sampler(config, r) for r in range(config.n_realizations)]


def empirical_density(samples: Sequence[SpectrumSample], bins=100, range=None) -> Histogram:
    if not samples:
        raise InvalidArgumentError("no samples")
    times = {s.t for s in samples}
    if len(times) != 1:
        raise InvalidArgumentError(f"samples taken at different times: {sorted(times)}")
    pooled = np.concatenate([s.eigenvalues for s in samples])
    counts, edges = np.histogram(pooled, bins=bins, range=range)
    width = np.diff(edges)
    total = counts.sum()
    if total == 0:
        raise InvalidArgumentError("no eigenvalues inside the histogram range")
    return Histogram(edges, counts / (total * width), int(total))


def empirical_overlap_curve(config: SimConfig):
    """Per-time mean and standard error of the top-eigenvector teacher overlap.

    Returns ``(times, mean, stderr)``; stderr is NaN for a single realization.
    """
    q = np.array([[s.top_overlap for s in _sample(config, r, full=False)]
                  for r in range(config.n_realizations)])
    mean = q.mean(axis=0)
    if config.n_realizations > 1:
        stderr = q.std(axis=0, ddof=1) / math.sqrt(config.n_realizations)
    else:
        stderr = np.full_like(mean, np.nan)
    return np.asarray(config.times), mean, stderr


def histogram_l1(hist: Histogram, density, n_sub: int = 8) -> float:
    """L1 distance between a histogram and a vectorized density callable.

    The density is averaged over each bin; density mass falling outside the
    histogram range counts fully towards the distance.
    """
    edges = hist.bin_edges
    width = np.diff(edges)
    frac = (np.arange(n_sub) + 0.5) / n_sub
    x = edges[:-1, None] + width[:, None] * frac[None, :]
    rho_bar = np.asarray(density(x.ravel())).reshape(x.shape).mean(axis=1)
    inside = float(np.sum(rho_bar * width))
    return float(np.sum(np.abs(hist.counts - rho_bar) * width) + max(0.0, 1.0 - inside))
