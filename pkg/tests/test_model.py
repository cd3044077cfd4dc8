import math

import numpy as np
import pytest

from transient_bbp.errors import InvalidArgumentError
from transient_bbp.model import ModelParams, kernel_coefficients, variance_profile


def test_coefficients_at_zero():
    k = kernel_coefficients(ModelParams(), 0.0)
    assert (k.a, k.b, k.c, k.d, k.f_fast, k.f_slow) == (1.0, 1.0, 0.0, 0.0, 0.0, 0.0)


def test_coefficients_late_time():
    p = ModelParams(lambda_minus=0.1)
    k = kernel_coefficients(p, 1e5)
    assert k.a == 0 and k.b < 1e-40
    assert k.c == pytest.approx(1.0) and k.d == pytest.approx(10.0)


def test_small_time_accuracy():
    k = kernel_coefficients(ModelParams(lambda_minus=0.1), 1e-12)
    assert k.f_slow == pytest.approx(1e-14, rel=1e-10)


def test_negative_time_rejected():
    with pytest.raises(InvalidArgumentError):
        kernel_coefficients(ModelParams(), -1.0)


@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=1.5), dict(lambda_minus=0.0),
                                dict(lambda_minus=2.0), dict(theta=-1.0), dict(gamma=0.0),
                                dict(lambda_plus=2.0)])
def test_invalid_params(kw):
    with pytest.raises(InvalidArgumentError):
        ModelParams(**kw)


def test_two_block_profile_at_zero():
    prof = variance_profile(ModelParams(), 0.0)
    assert prof.n_blocks == 2
    np.testing.assert_allclose(prof.sigma, 4.0)
    assert sum(prof.weights) == pytest.approx(1.0)


def test_alpha_one_drops_slow_block():
    prof = variance_profile(ModelParams(alpha=1.0), 3.0)
    assert prof.n_blocks == 1


def test_three_block_profile():
    p = ModelParams(gamma=0.8, alpha=0.5, lambda_minus=0.1)
    prof = variance_profile(p, 7.0)
    assert prof.n_blocks == 3
    assert prof.weights == pytest.approx((0.4, 0.4, 0.2))
    assert prof.sigma[2, 2] == pytest.approx(4.0)
    assert prof.learned[2] == 0.0
    np.testing.assert_allclose(prof.sigma, prof.sigma.T)


def test_profile_formula():
    p = ModelParams(gamma=2.0, lambda_minus=0.3)
    t = 1.7
    k = kernel_coefficients(p, t)
    prof = variance_profile(p, t)
    assert prof.sigma[0, 1] == pytest.approx((k.a + k.b) ** 2 + (k.c**2 + k.d**2) / 2.0)
    assert prof.weighted[0, 1] == pytest.approx(prof.sigma[0, 1] * 0.5)
    assert math.isclose(prof.sigma_max, prof.sigma.max())
