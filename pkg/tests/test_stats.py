"""Quantile oracles and noise-stream reproducibility."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exactoed.errors import ConfigError
from exactoed.stats import NoiseStream, chi2_cdf, chi2_quantile, f_cdf, f_quantile, gaussian_draws

ALPHA = 0.9545


def test_chi2_dof2_closed_form():
    # dof = 2: CDF is 1 - exp(-x/2), so the quantile is -2 ln(1 - alpha)
    assert chi2_quantile(ALPHA, 2) == pytest.approx(-2.0 * math.log(1.0 - ALPHA), rel=1e-12)
    assert chi2_quantile(ALPHA, 2) == pytest.approx(6.180085906050465, abs=1e-12)


def test_f_22_closed_form():
    # dof = (2, 2): CDF is x / (1 + x), so the quantile is alpha / (1 - alpha)
    assert f_quantile(ALPHA, 2, 2) == pytest.approx(ALPHA / (1.0 - ALPHA), rel=1e-12)
    assert f_quantile(ALPHA, 2, 2) == pytest.approx(20.978021978021985, abs=1e-10)


def test_case1_threshold_constant():
    # n_p * sigma^2 * F(alpha; n_p, N - n_p) at sigma = 0.1, N = 4
    c = 2 * 0.1**2 * f_quantile(ALPHA, 2, 2)
    assert c == pytest.approx(0.4195604395604398, abs=1e-12)


@given(st.floats(0.01, 0.995), st.integers(1, 30))
@settings(max_examples=60, deadline=None)
def test_chi2_quantile_inverts_cdf(alpha, dof):
    x = chi2_quantile(alpha, dof)
    assert chi2_cdf(x, dof) == pytest.approx(alpha, abs=1e-9)


@given(st.floats(0.01, 0.99), st.integers(1, 20), st.integers(1, 20))
@settings(max_examples=60, deadline=None)
def test_f_quantile_inverts_cdf(alpha, dof1, dof2):
    x = f_quantile(alpha, dof1, dof2)
    assert f_cdf(x, dof1, dof2) == pytest.approx(alpha, abs=1e-9)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.integers(1, 10))
@settings(max_examples=40, deadline=None)
def test_chi2_quantile_monotone(a1, a2, dof):
    lo, hi = sorted((a1, a2))
    assert chi2_quantile(lo, dof) <= chi2_quantile(hi, dof) + 1e-12


def test_quantile_argument_validation():
    with pytest.raises(ConfigError):
        chi2_quantile(1.0, 2)
    with pytest.raises(ConfigError):
        chi2_quantile(0.5, 0)
    with pytest.raises(ConfigError):
        f_quantile(-0.1, 2, 2)


def test_noise_stream_reproducible():
    s = NoiseStream(42, np.array([0.1]))
    a = gaussian_draws(s, 8)
    b = gaussian_draws(s, 8)
    assert np.array_equal(a, b)
    assert a.shape == (8, 1)


def test_noise_substreams_differ_and_commute():
    s = NoiseStream(42, np.array([0.1]))
    d3 = gaussian_draws(s.substream(3), 4)
    d4 = gaussian_draws(s.substream(4), 4)
    assert not np.array_equal(d3, d4)
    # re-deriving the same substream gives the same draws regardless of order
    assert np.array_equal(gaussian_draws(s.substream(3), 4), d3)


def test_noise_sigma_zero_gives_exact_zeros():
    s = NoiseStream(0, np.array([0.0]))
    assert np.all(gaussian_draws(s, 16) == 0.0)


def test_noise_scales_with_sigma():
    base = NoiseStream(7, np.array([1.0]))
    scaled = NoiseStream(7, np.array([0.5]))
    assert np.allclose(gaussian_draws(scaled, 32), 0.5 * gaussian_draws(base, 32))
