"""Point estimators, the rerandomization variance approximation, and the
block-residual variance estimator with Wald intervals."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .numerics import chi2_cdf, mahalanobis_metric, normal_quantile

REGIMES = ("none", "first")


@dataclass(frozen=True)
class PeriodEstimates:
    """Per-period contrasts and their average.

    For the first-order regime ``per_period[k]`` belongs to period ``k + 1``
    (0-based), i.e. the first period has no contrast.
    """

    regime: str
    per_period: np.ndarray
    estimate: float

    def to_dict(self) -> dict:
        return {"regime": self.regime, "per_period": self.per_period.tolist(), "estimate": self.estimate}


def _balanced(w):
    w = np.asarray(w).reshape(-1)
    if not np.isin(w, (0, 1)).all() or 2 * int(w.sum()) != w.shape[0]:
        raise ValueError("assignment column must be 0/1 with exactly half treated")
    return w.astype(bool)


def diff_in_means_period(y, w) -> float:
    """Treated mean minus control mean for a balanced column."""
    w = _balanced(w)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = w.shape[0]
    return float((2.0 / n) * y[w].sum() - (2.0 / n) * y[~w].sum())


def sate_no_carryover(trajectory) -> PeriodEstimates:
    W, Y = trajectory.W, trajectory.Y
    per = np.array([diff_in_means_period(Y[:, t], W[:, t]) for t in range(W.shape[1])])
    return PeriodEstimates("none", per, float(per.mean()))


def stay_contrast(y, w_prev, w_cur, ratio: bool = False) -> float:
    """Stay-treated minus stay-control contrast at one period.

    With ``ratio=False`` each group sum is scaled by ``4/N`` (exact means when
    the groups have ``N/4`` members, as under blocking); with ``ratio=True``
    it is divided by the realized group size, and an empty group gives NaN.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    w_prev = np.asarray(w_prev).reshape(-1).astype(bool)
    w_cur = np.asarray(w_cur).reshape(-1).astype(bool)
    stay1 = w_prev & w_cur
    stay0 = ~w_prev & ~w_cur
    if ratio:
        if not stay1.any() or not stay0.any():
            return math.nan
        return float(y[stay1].mean() - y[stay0].mean())
    n = y.shape[0]
    return float((4.0 / n) * y[stay1].sum() - (4.0 / n) * y[stay0].sum())


def sate_carryover(trajectory, ratio: bool = False) -> PeriodEstimates:
    """Average of the stay-group contrasts over periods ``1..T-1`` (0-based).

    Under ``ratio=True`` periods with an empty stay group are skipped with a
    warning and the average is over the remaining periods.
    """
    W, Y = trajectory.W, trajectory.Y
    T = W.shape[1]
    if T < 2:
        raise ValueError("the carryover estimator needs at least two periods")
    per = np.array([stay_contrast(Y[:, t], W[:, t - 1], W[:, t], ratio) for t in range(1, T)])
    ok = ~np.isnan(per)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} period(s) with an empty stay group skipped", RuntimeWarning,
                      stacklevel=2)
        if not ok.any():
            raise ValueError("every period has an empty stay group")
    return PeriodEstimates("first", per, float(per[ok].mean()))


def variance_reduction_factor(d: int, c: float) -> float:
    """``P(chi2_{d+2} <= c) / P(chi2_d <= c)``, the rerandomization shrinkage factor."""
    if not c > 0:
        raise ValueError(f"threshold must be positive, got {c}")
    if math.isinf(c):
        return 1.0
    num, den = chi2_cdf(c, d + 2), chi2_cdf(c, d)
    if den == 0.0:
        # both CDFs underflow; leading term of the small-c expansion
        return c / (d + 2.0)
    return num / den


def _projection_variance(cov_yh, precision):
    return float(cov_yh @ precision @ cov_yh)


def conditional_variance_approx(y, H, w, threshold: float) -> float:
    """Plug-in large-``N`` variance of one period's difference in means under rerandomization.

    Arm variances and arm-wise covariances with ``H`` are sample analogues
    within each observed arm; ``S_H^2`` uses all units. The non-identifiable
    variance of unit effects is replaced by the variance of their projection
    on ``H`` (a lower bound), so the value is conservative.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    w = _balanced(w)
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    n, d = H.shape
    if n != y.shape[0]:
        raise ValueError("y and H must have the same number of rows")
    y1, y0 = y[w], y[~w]
    H1, H0 = H[w], H[~w]
    s1 = y1.var(ddof=1)
    s0 = y0.var(ddof=1)
    if d == 0:
        return (2.0 * s1 + 2.0 * s0) / n

    Hc = H - H.mean(axis=0)
    S_H = Hc.T @ Hc / (n - 1)
    precision = mahalanobis_metric(S_H).precision

    def cov_with_h(yg, Hg):
        return (Hg - Hg.mean(axis=0)).T @ (yg - yg.mean()) / (len(yg) - 1)

    c1, c0 = cov_with_h(y1, H1), cov_with_h(y0, H0)
    p1 = _projection_variance(c1, precision)
    p0 = _projection_variance(c0, precision)
    ptau = _projection_variance(c1 - c0, precision)
    v_tt = 2.0 * s1 + 2.0 * s0 - ptau
    explained = 2.0 * p1 + 2.0 * p0 - ptau
    if v_tt <= 0:
        return 0.0
    r2 = min(1.0, max(0.0, explained / v_tt))
    v = variance_reduction_factor(d, threshold)
    return v_tt / n * (1.0 - (1.0 - v) * r2)


# ---------------------------------------------------------------------------
# Block-residual variance


@dataclass(frozen=True)
class VarianceReport:
    """Block-residual variance estimate and the Wald interval built on it.

    ``block_starts`` are 1-based positions in the contrast series; the
    variance of the estimate is ``sum_sq_residuals / len(series)^2``.
    """

    sum_sq_residuals: float
    block_starts: tuple
    block_size: int
    predictor: str
    regime: str
    estimate: float
    variance: float
    level: float
    lo: float
    hi: float
    residuals: tuple
    unpredicted_blocks: tuple

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        return asdict(self)


def scaled_mean_predictor(past: np.ndarray, length: int) -> float:
    """``length`` times the mean of the ``past`` contrasts."""
    return length / past.shape[0] * float(past.sum())


def recency_weighted_predictor(past: np.ndarray, length: int, halflife: float = 8.0) -> float:
    """``length`` times an exponentially weighted mean favouring recent contrasts."""
    ages = np.arange(past.shape[0])[::-1]
    weights = 0.5 ** (ages / halflife)
    return length * float(weights @ past / weights.sum())


PREDICTORS: dict[str, Callable] = {
    "scaled_mean": scaled_mean_predictor,
    "recency": recency_weighted_predictor,
}


def block_conservative_variance(series, block_size: int = 8, predictor="scaled_mean", regime: str = "first",
                                level: float = 0.95, estimate: float | None = None) -> VarianceReport:
    """Prediction-residual variance estimate from a series of per-period contrasts.

    The series is cut into blocks starting at positions ``1, 1 + b, 1 + 2b, ...``
    (1-based; the last block may be shorter). In each block the contrasts
    after the first are summed and compared with a prediction built only
    from the contrasts before the block; the squared residuals are added up.
    The first block has nothing to predict from, so its prediction is 0.

    Parameters
    ----------
    series : array_like
        Per-period contrasts in time order (``T`` of them without carryover,
        ``T - 1`` with first-order carryover).
    block_size : int
        Block length ``b``.
    predictor : str or callable
        ``"scaled_mean"``, ``"recency"``, or ``f(past, length) -> float`` where
        ``past`` holds the contrasts before the block and ``length`` is the
        number of summed contrasts in the block. A callable is also used for
        the first block.
    regime : str
        ``"none"`` or ``"first"``; recorded in the report.
    level : float
        Wald interval coverage.
    estimate : float, optional
        Point estimate; defaults to the series mean.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    L = x.shape[0]
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    if block_size < 2:
        raise ValueError(f"block_size must be at least 2, got {block_size}")
    if L < block_size:
        raise ValueError(f"series of length {L} is shorter than one block of {block_size}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if callable(predictor):
        predict, name, predict_first = predictor, getattr(predictor, "__name__", "custom"), True
    elif predictor in PREDICTORS:
        predict, name, predict_first = PREDICTORS[predictor], predictor, False
    else:
        raise ValueError(f"unknown predictor {predictor!r}")

    starts = list(range(1, L + 1, block_size))
    bounds = starts + [L + 1]
    residuals = []
    unpredicted = []
    for j, start in enumerate(starts):
        end = bounds[j + 1]
        length = end - start - 1
        block_sum = float(x[start:end - 1].sum())
        past = x[: start - 1]
        if past.size == 0 and not predict_first:
            m = 0.0
            unpredicted.append(j + 1)
        else:
            m = float(predict(past, length))
        residuals.append(block_sum - m)

    v2 = float(np.sum(np.square(residuals)))
    est = float(x.mean()) if estimate is None else float(estimate)
    variance = v2 / L**2
    z = normal_quantile(0.5 + level / 2.0)
    half = z * math.sqrt(variance)
    return VarianceReport(v2, tuple(starts), int(block_size), name, regime, est, variance, level,
                          est - half, est + half, tuple(residuals), tuple(unpredicted))


def wald_interval(estimate: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    z = normal_quantile(0.5 + level / 2.0)
    half = z * math.sqrt(max(variance, 0.0))
    return estimate - half, estimate + half


def rerandomization_variance(trajectory, threshold: float | None = None) -> float:
    """Variance of the no-carryover estimate from per-period plug-in approximations.

    Rebuilds each period's balancing variables from the trajectory with the
    policy's balance spec; ``threshold`` overrides the policy threshold.
    Periods run by complete randomization use the factor 1.
    """
    policy = trajectory.policy
    W, Y, X = trajectory.W, trajectory.Y, trajectory.X
    T = W.shape[1]
    total = 0.0
    for t in range(T):
        H = np.zeros((W.shape[0], 0))
        if policy.rerandomizes and policy.balance is not None:
            H = policy.balance(t, X[:, : t + 1], Y[:, :t])
        c = math.inf
        if H.shape[1]:
            c = policy.threshold_for(H.shape[1]) if threshold is None else threshold
        total += conditional_variance_approx(Y[:, t], H, W[:, t], c)
    return total / T**2
