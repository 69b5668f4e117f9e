import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obtkit.smoothing import PenalizedSpline


@pytest.fixture(scope="module")
def spline():
    x = np.random.default_rng(0).uniform(6, 85, 400)
    return PenalizedSpline(x, 20)


def noisy(x, seed=1):
    return np.sin(x / 9) + 0.3 * np.random.default_rng(seed).standard_normal(x.size)


@pytest.mark.parametrize("edf", [2.5, 3.0, 5.0, 8.0, 15.0])
def test_requested_edf_is_achieved(spline, edf):
    n = spline.basis.shape[0]
    fit = spline.fit(noisy(np.arange(n, dtype=float)), np.ones(n), edf)
    assert fit.edf == pytest.approx(edf, abs=1e-6)


def test_edf_is_the_smoother_trace(spline):
    n = spline.basis.shape[0]
    w = np.random.default_rng(2).uniform(0.5, 2.0, n)
    fit = spline.fit(np.zeros(n), w, 4.0)
    B = spline.basis
    hat = B @ np.linalg.solve(B.T @ (B * w[:, None]) + fit.lam * spline.omega, B.T * w)
    assert np.trace(hat) == pytest.approx(4.0, abs=1e-6)


def test_edf_one_is_weighted_mean(spline):
    n = spline.basis.shape[0]
    z = np.arange(n, dtype=float)
    w = np.linspace(1, 3, n)
    fit = spline.fit(z, w, 1.0)
    np.testing.assert_allclose(fit.fitted, np.average(z, weights=w))
    assert fit.penalty == 0.0


def test_full_edf_is_least_squares(spline):
    n = spline.basis.shape[0]
    z = noisy(np.arange(n, dtype=float))
    fit = spline.fit(z, np.ones(n), spline.k)
    coef, *_ = np.linalg.lstsq(spline.basis, z, rcond=None)
    np.testing.assert_allclose(fit.fitted, spline.basis @ coef, atol=1e-8)
    assert fit.lam == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(-5, 5), st.floats(2.0, 12.0))
def test_lines_pass_through_unchanged(a, b, edf):
    x = np.linspace(6, 85, 120)
    sp = PenalizedSpline(x, 10)
    fit = sp.fit(a + b * x, np.ones_like(x), edf)
    np.testing.assert_allclose(fit.fitted, a + b * x, atol=1e-6 * (1 + abs(a) + 85 * abs(b)))
    assert fit.penalty < 1e-6 * (1 + a * a + b * b)


def test_penalty_never_negative(spline):
    n = spline.basis.shape[0]
    for edf in (2.0, 2.001, 3.0, 10.0):
        assert spline.fit(noisy(np.arange(n, dtype=float)), np.ones(n), edf).penalty >= 0


def test_weight_scale_invariance(spline):
    n = spline.basis.shape[0]
    z = noisy(np.arange(n, dtype=float))
    w = np.random.default_rng(3).uniform(0.2, 5, n)
    a, b = spline.fit(z, w, 5.0), spline.fit(z, 1000 * w, 5.0)
    np.testing.assert_allclose(a.fitted, b.fitted, rtol=1e-8, atol=1e-10)


def test_evaluation_outside_range(spline):
    fit = spline.fit(np.zeros(spline.basis.shape[0]), np.ones(spline.basis.shape[0]), 3.0)
    assert fit([spline.lo, spline.hi]).shape == (2,)
    with pytest.raises(ValueError):
        fit([spline.hi + 1])


def test_few_distinct_covariates():
    x = np.repeat([10.0, 20.0, 30.0], 20)
    sp = PenalizedSpline(x, 20)
    fit = sp.fit(x / 10, np.ones_like(x), 3.0)
    np.testing.assert_allclose(fit([10, 20, 30]), [1, 2, 3], atol=1e-8)
