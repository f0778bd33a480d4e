import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from switchlab.numerics import (chi2_cdf, chi2_quantile, euclidean_metric, imbalance_vector, mahalanobis,
                                mahalanobis_metric, normal_quantile, regularized_gamma_p, scaled_covariance)


# --- chi-square ------------------------------------------------------------

@pytest.mark.parametrize("x,d,expected", [
    (0.0, 5, 0.0),
    (1.386294, 2, 0.5),
    (3.841459, 1, 0.95),
])
def test_chi2_cdf_examples(x, d, expected):
    assert chi2_cdf(x, d) == pytest.approx(expected, abs=1e-6)


def test_chi2_cdf_closed_forms():
    # d = 2: 1 - exp(-x/2); d = 1: erf(sqrt(x/2))
    for x in (1e-6, 0.02, 0.7, 3.0, 11.0, 60.0):
        assert chi2_cdf(x, 2) == pytest.approx(-math.expm1(-x / 2), abs=1e-12)
        assert chi2_cdf(x, 1) == pytest.approx(math.erf(math.sqrt(x / 2)), abs=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3, 5, 10, 31, 100])
def test_chi2_cdf_against_scipy(d):
    for x in np.linspace(0.0, 3.0 * d + 20, 41):
        assert abs(chi2_cdf(x, d) - stats.chi2.cdf(x, d)) <= 1e-10


def test_chi2_cdf_domain():
    with pytest.raises(ValueError):
        chi2_cdf(-0.1, 2)
    with pytest.raises(ValueError):
        chi2_cdf(1.0, 0)
    with pytest.raises(ValueError):
        chi2_cdf(1.0, 1.5)
    assert chi2_cdf(math.inf, 3) == 1.0


@pytest.mark.parametrize("p,d,expected", [
    (0.01, 2, -2 * math.log(0.99)),
    (0.5, 2, -2 * math.log(0.5)),
])
def test_chi2_quantile_examples(p, d, expected):
    assert chi2_quantile(p, d) == pytest.approx(expected, rel=1e-10)
    assert round(chi2_quantile(p, d), 6) == round(expected, 6)


def test_chi2_quantile_grid_roundtrip():
    ps = np.round(np.arange(0.001, 1.0, 0.001), 3)
    worst = 0.0
    for d in range(1, 11):
        for p in ps:
            q = chi2_quantile(p, d)
            worst = max(worst, abs(chi2_cdf(q, d) - p))
            assert chi2_quantile(chi2_cdf(q, d), d) == pytest.approx(q, rel=1e-8, abs=1e-12)
    assert worst <= 1e-8


@pytest.mark.parametrize("d", [1, 2, 4, 7])
def test_chi2_quantile_against_scipy(d):
    for p in (1e-6, 0.01, 0.3, 0.9, 0.999999):
        assert chi2_quantile(p, d) == pytest.approx(stats.chi2.ppf(p, d), rel=1e-8)


@given(st.floats(0.001, 0.998), st.floats(1e-4, 0.001), st.integers(1, 12))
@settings(max_examples=60, deadline=None)
def test_chi2_quantile_monotone(p, dp, d):
    assert chi2_quantile(p, d) < chi2_quantile(p + dp, d)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
def test_chi2_quantile_domain(p):
    with pytest.raises(ValueError):
        chi2_quantile(p, 2)


def test_regularized_gamma_against_scipy():
    from scipy import special
    for a in (0.5, 1.0, 2.5, 10.0, 50.0):
        for x in (0.01, 0.5, a, a + 1.0, 2 * a + 5):
            assert regularized_gamma_p(a, x) == pytest.approx(special.gammainc(a, x), abs=1e-12)


def test_normal_quantile():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-10)
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.1) == pytest.approx(stats.norm.ppf(0.1), abs=1e-10)


# --- scaled covariance ----------------------------------------------------

def test_scaled_covariance_examples():
    assert np.array_equal(scaled_covariance(np.full((6, 1), 3.7)), np.zeros((1, 1)))
    assert scaled_covariance(np.array([[-1.0], [1.0]]), 2) == pytest.approx(np.array([[2.0]]))
    H = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    S = scaled_covariance(H, 4)
    assert S[0, 1] == 0.0 and S[1, 0] == 0.0
    assert S[0, 0] == pytest.approx(1.0) and S[1, 1] == pytest.approx(1.0)


def test_scaled_covariance_rejects_bad_group_size():
    with pytest.raises(ValueError):
        scaled_covariance(np.ones((4, 1)), 3)
    with pytest.raises(ValueError):
        scaled_covariance(np.ones((1, 1)))


@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_scaled_covariance_symmetric_psd(n, d, seed):
    H = np.random.default_rng(seed).normal(size=(n, d))
    S = scaled_covariance(H)
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-10


def test_imbalance_vector_complement_negates():
    rng = np.random.default_rng(4)
    H = rng.normal(size=(10, 3))
    w = np.array([1, 0] * 5)
    assert np.array_equal(imbalance_vector(H, 1 - w), -imbalance_vector(H, w))
    expected = H[w == 1].mean(axis=0) - H[w == 0].mean(axis=0)
    assert imbalance_vector(H, w) == pytest.approx(expected, rel=1e-12)


# --- Mahalanobis ----------------------------------------------------------

def test_mahalanobis_examples():
    assert mahalanobis([0.0, 0.0], np.eye(2) * 3) == 0.0
    assert mahalanobis([2.0], [[2.0]]) == 2.0
    sing = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert math.isfinite(mahalanobis([1.0, 1.0], sing))
    assert mahalanobis([1.0, 1.0], sing) == pytest.approx(1.0)
    assert mahalanobis([1.0, -1.0], sing) == math.inf
    with pytest.raises(ValueError):
        mahalanobis([1.0, 2.0], np.eye(3))


def test_constant_balance_accepts_everything():
    # all-zero covariance: zero imbalance has distance 0
    metric = mahalanobis_metric(np.zeros((2, 2)))
    assert metric(np.zeros(2)) == 0.0
    assert metric(np.array([1e-3, 0.0])) == math.inf


def test_euclidean_metric():
    assert euclidean_metric(np.eye(3) * 7)(np.array([1.0, 2.0, 2.0])) == pytest.approx(9.0)


@given(st.integers(1, 5), st.integers(0, 2**31))
@settings(max_examples=80, deadline=None)
def test_mahalanobis_affine_invariance(d, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(d, d))
    sigma = B @ B.T + 0.1 * np.eye(d)
    theta = rng.normal(size=d)
    A = rng.normal(size=(d, d)) + 2 * np.eye(d)
    if abs(np.linalg.det(A)) < 1e-2 or np.linalg.cond(A) > 1e4:
        return
    base = mahalanobis(theta, sigma)
    moved = mahalanobis(A @ theta, A @ sigma @ A.T)
    assert moved == pytest.approx(base, rel=1e-8)
    assert base == pytest.approx(theta @ np.linalg.solve(sigma, theta), rel=1e-10)


@given(st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_mahalanobis_positive_definite(d, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(d, d))
    sigma = B @ B.T + np.eye(d)
    theta = rng.normal(size=d)
    assert mahalanobis(theta, sigma) > 0
    assert mahalanobis(np.zeros(d), sigma) == 0
