"""Small statistical numerics used by the designs and estimators.

Chi-square distribution functions are computed from the regularized lower
incomplete gamma function (power series below ``a + 1``, Lentz continued
fraction above), so results do not depend on a platform special-function
library. Balance distances are dense quadratic forms; ``d`` is expected to be
small (single digits).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000

# Eigenvalues below this fraction of the largest one are treated as zero.
EIGEN_CUTOFF = 1e-10
# Relative size of the off-span part of an imbalance vector that makes it infinitely far.
OFF_SPAN_TOL = 1e-8


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by the power series; converges quickly for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction; for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError(f"shape must be positive, got {a}")
    if x < 0:
        raise ValueError(f"argument must be nonnegative, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cont_frac(a, x))


def _check_df(d) -> int:
    if int(d) != d or d < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {d}")
    return int(d)


def chi2_cdf(x: float, d: int) -> float:
    """P(chi2_d <= x).

    Parameters
    ----------
    x : float
        Nonnegative evaluation point; ``inf`` is allowed and returns 1.
    d : int
        Degrees of freedom.
    """
    d = _check_df(d)
    if not x >= 0:
        raise ValueError(f"chi-square CDF is defined for x >= 0, got {x}")
    return regularized_gamma_p(0.5 * d, 0.5 * x)


def chi2_pdf(x: float, d: int) -> float:
    d = _check_df(d)
    if x < 0:
        return 0.0
    k = 0.5 * d
    if x == 0:
        if d == 1:
            return math.inf
        return 0.5 if d == 2 else 0.0
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(p: float, d: int) -> float:
    """Inverse of :func:`chi2_cdf` in ``x`` for ``0 < p < 1``.

    Wilson-Hilferty starting point, then Newton steps kept inside a shrinking
    bracket (bisection whenever a step leaves it).
    """
    d = _check_df(d)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")

    lo, hi = 0.0, max(1.0, 2.0 * d)
    while chi2_cdf(hi, d) < p:
        lo, hi = hi, 2.0 * hi

    z = normal_quantile_approx(p)
    h = 2.0 / (9.0 * d)
    x = d * (1.0 - h + z * math.sqrt(h)) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)

    for _ in range(200):
        f = chi2_cdf(x, d) - p
        if f == 0.0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        pdf = chi2_pdf(x, d)
        step = f / pdf if pdf > 0 and math.isfinite(pdf) else math.inf
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, x) or hi - lo <= 1e-300:
            x = x_new
            break
        x = x_new
    return x


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile_approx(p: float) -> float:
    # Acklam-style rational approximation, ~1e-9 relative; only used as a starting point
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549671010482305e00, 4.374664141464968e00, 2.938163982698783e00)
    e = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0)
    if p > 1.0 - plow:
        return -normal_quantile_approx(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def normal_quantile(p: float) -> float:
    """Standard normal quantile from the one-degree-of-freedom chi-square quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    z = math.sqrt(chi2_quantile(abs(2.0 * p - 1.0), 1))
    return z if p > 0.5 else -z


def scaled_covariance(H, group_size: int | None = None) -> np.ndarray:
    """``(4 / n^2) * sum_i (H_i - Hbar)(H_i - Hbar)^T`` over the rows of ``H``.

    This is the covariance of the treated-minus-control mean difference under
    an even split of ``n`` rows, up to the finite-population correction.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    n = H.shape[0] if group_size is None else int(group_size)
    if n < 2 or H.shape[0] != n:
        raise ValueError(f"need at least two rows and group_size == rows, got {H.shape[0]} rows, "
                         f"group_size={group_size}")
    centered = H - H.mean(axis=0)
    # constant columns are exactly zero, not mean-rounding noise
    centered[:, np.ptp(H, axis=0) == 0] = 0.0
    sigma = (4.0 / n**2) * (centered.T @ centered)
    return 0.5 * (sigma + sigma.T)


def imbalance_vector(H, w) -> np.ndarray:
    """Treated-minus-control mean difference of the rows of ``H``, each mean over ``n/2`` rows.

    Computed as ``(2/n) * sum_i (2 w_i - 1) H_i`` so that the complement
    assignment yields the exact negation.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    signs = 2.0 * np.asarray(w, dtype=float) - 1.0
    return (2.0 / H.shape[0]) * (signs @ H)


@dataclass(frozen=True)
class QuadraticMetric:
    """Balance distance ``theta^T A theta`` with an infinite-distance null space.

    ``precision`` is ``A``; ``null_projector`` projects onto the directions in
    which the balancing variables do not vary. An imbalance vector with a
    non-negligible component there is reported as ``inf``.
    """

    precision: np.ndarray
    null_projector: np.ndarray

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.dim:
            raise ValueError(f"imbalance has dimension {theta.shape[0]}, metric expects {self.dim}")
        norm = float(np.sqrt(theta @ theta))
        if norm == 0.0:
            return 0.0
        off = self.null_projector @ theta
        if float(np.sqrt(off @ off)) > OFF_SPAN_TOL * norm:
            return math.inf
        return max(0.0, float(theta @ self.precision @ theta))


def mahalanobis_metric(sigma) -> QuadraticMetric:
    """Pseudo-inverse Mahalanobis metric for a (possibly singular) covariance."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"covariance must be square, got shape {sigma.shape}")
    d = sigma.shape[0]
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    top = vals.max() if d else 0.0
    if not top > 0.0:
        return QuadraticMetric(np.zeros((d, d)), np.eye(d))
    keep = vals > EIGEN_CUTOFF * top
    kept = vecs[:, keep]
    precision = (kept / vals[keep]) @ kept.T
    null_projector = np.eye(d) - kept @ kept.T
    return QuadraticMetric(0.5 * (precision + precision.T), null_projector)


def euclidean_metric(sigma) -> QuadraticMetric:
    """Plain squared l2 imbalance; ``sigma`` is only used for its dimension."""
    d = np.atleast_2d(np.asarray(sigma)).shape[0]
    return QuadraticMetric(np.eye(d), np.zeros((d, d)))


def mahalanobis(theta, sigma) -> float:
    """``theta^T sigma^{-1} theta``; pseudo-inverse rule when ``sigma`` is singular.

    >>> mahalanobis([2.0], [[2.0]])
    2.0
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape != (theta.shape[0], theta.shape[0]):
        raise ValueError(f"dimension mismatch: theta {theta.shape}, sigma {sigma.shape}")
    return mahalanobis_metric(sigma)(theta)
