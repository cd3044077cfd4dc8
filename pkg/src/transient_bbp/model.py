"""Static parameters, gradient-flow kernel coefficients and block variance profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the two-level (or, for ``gamma < 1``, three-block) model.

    ``gamma`` is the aspect ratio M/N, ``alpha`` the fraction of fast input
    directions, ``lambda_minus`` the slow singular value and ``theta`` the
    teacher amplitude. ``lambda_plus`` is pinned to 1.
    """

    gamma: float = 1.0
    alpha: float = 0.5
    lambda_minus: float = 0.1
    theta: float = 0.0
    lambda_plus: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidArgumentError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.lambda_plus != 1.0:
            raise InvalidArgumentError("lambda_plus is fixed at 1.0")
        if not 0 < self.lambda_minus <= self.lambda_plus:
            raise InvalidArgumentError(
                f"lambda_minus must lie in (0, 1], got {self.lambda_minus}"
            )
        if not self.theta >= 0:
            raise InvalidArgumentError(f"theta must be >= 0, got {self.theta}")

    @property
    def three_block(self) -> bool:
        return self.gamma < 1

    def with_theta(self, theta: float) -> "ModelParams":
        return replace(self, theta=float(theta))

    def without_theta(self) -> "ModelParams":
        return replace(self, theta=0.0)


@dataclass(frozen=True)
class KernelCoeffs:
    t: float
    a: float
    b: float
    c: float
    d: float
    f_fast: float
    f_slow: float


def _check_time(t: float) -> float:
    t = float(t)
    if not t >= 0 or math.isinf(t):
        raise InvalidArgumentError(f"time must be finite and >= 0, got {t}")
    return t


def kernel_coefficients(params: ModelParams, t: float) -> KernelCoeffs:
    t = _check_time(t)
    lp2 = params.lambda_plus**2
    lm2 = params.lambda_minus**2
    # -expm1 keeps 1 - e^{-x} accurate for small x
    f_fast = -math.expm1(-lp2 * t)
    f_slow = -math.expm1(-lm2 * t)
    return KernelCoeffs(
        t=t,
        a=math.exp(-lp2 * t),
        b=math.exp(-lm2 * t),
        c=f_fast / params.lambda_plus,
        d=f_slow / params.lambda_minus,
        f_fast=f_fast,
        f_slow=f_slow,
    )


@dataclass(frozen=True)
class VarianceProfile:
    """Block weights and the symmetric block-variance matrix.

    ``learned`` holds the per-block learned fraction f_p (zero for the null
    block); it is carried along because the teacher quadratic forms need it.
    """

    weights: tuple
    sigma: np.ndarray
    learned: tuple = ()
    labels: tuple = ()

    @property
    def n_blocks(self) -> int:
        return len(self.weights)

    @property
    def weighted(self) -> np.ndarray:
        """Matrix with entries sigma_pq * alpha_q, the kernel of the Dyson map."""
        return self.sigma * np.asarray(self.weights)[None, :]

    @property
    def sigma_max(self) -> float:
        return float(np.max(self.sigma))

    def __hash__(self):
        return hash((self.weights, self.sigma.tobytes(), self.learned))

    def __eq__(self, other):
        if not isinstance(other, VarianceProfile):
            return NotImplemented
        return (
            self.weights == other.weights
            and self.learned == other.learned
            and np.array_equal(self.sigma, other.sigma)
        )


def block_variance(a_p, a_q, c_p, c_q, gamma):
    return (a_p + a_q) ** 2 + (c_p**2 + c_q**2) / gamma


def profile_from_blocks(weights, a, c, learned, gamma, labels=None) -> VarianceProfile:
    """Assemble a profile from per-block damping ``a`` and noise gain ``c``.

    Zero-weight blocks are dropped.
    """
    keep = [i for i, w in enumerate(weights) if w > 0]
    w = np.array([weights[i] for i in keep], dtype=float)
    a = np.array([a[i] for i in keep], dtype=float)
    c = np.array([c[i] for i in keep], dtype=float)
    sigma = block_variance(a[:, None], a[None, :], c[:, None], c[None, :], gamma)
    if abs(w.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError(f"block weights sum to {w.sum()}, expected 1")
    return VarianceProfile(
        weights=tuple(float(x) for x in w),
        sigma=sigma,
        learned=tuple(float(learned[i]) for i in keep),
        labels=tuple(labels[i] for i in keep) if labels else tuple(keep),
    )


def variance_profile(params: ModelParams, t: float) -> VarianceProfile:
    k = kernel_coefficients(params, t)
    g = params.gamma
    if g >= 1:
        weights = (params.alpha, 1.0 - params.alpha)
        return profile_from_blocks(
            weights, (k.a, k.b), (k.c, k.d), (k.f_fast, k.f_slow), g, labels=("A", "B")
        )
    weights = (params.alpha * g, (1.0 - params.alpha) * g, 1.0 - g)
    # null block: initialisation never damped, no noise injected
    return profile_from_blocks(
        weights,
        (k.a, k.b, 1.0),
        (k.c, k.d, 0.0),
        (k.f_fast, k.f_slow, 0.0),
        g,
        labels=("A", "B", "C"),
    )
