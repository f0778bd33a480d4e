"""Assignment policies and the sequential experiment loop.

Four policies are available:

* ``"cr"`` -- complete randomization, ``N/2`` treated each period;
* ``"blocked_cr"`` -- from the second period on, ``N/4`` treated within each
  group defined by the previous assignment;
* ``"srsb"`` -- sequential rerandomization on balancing variables built from
  the observed history;
* ``"blocked_srsb"`` -- sequential rerandomization within the previous-
  assignment blocks, accepting only when both blocks are balanced.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .numerics import (OFF_SPAN_TOL, QuadraticMetric, chi2_quantile, euclidean_metric,
                       imbalance_vector, mahalanobis_metric, scaled_covariance)
from .population import PotentialOutcomes
from .streams import as_generator

POLICY_KINDS = ("cr", "blocked_cr", "srsb", "blocked_srsb")
TRAJECTORY_FORMAT = "switchlab.trajectory"
TRAJECTORY_VERSION = 1
DEFAULT_MAX_DRAWS = 10_000

_METRICS = {"mahalanobis": mahalanobis_metric, "l2": euclidean_metric}


# ---------------------------------------------------------------------------
# Balancing variables


class BalanceSpec:
    """Builds the balancing matrix for period ``t`` from the observed history.

    ``__call__`` receives covariates for periods ``0..t`` (shape ``(N, t+1, d_x)``)
    and outcomes for periods ``0..t-1`` (shape ``(N, t)``) and returns an
    ``(N, d_t)`` array. Because only these slices are passed in, a spec cannot
    look at the current or future outcomes.
    """

    def dim(self, t: int, covariate_dim: int) -> int:
        raise NotImplementedError

    def __call__(self, t: int, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LaggedOutcomeBalance(BalanceSpec):
    """``H[i, t] = (X[i, t], Y[i, t-1], ..., Y[i, t-n_lags])``.

    Lags that would predate the first period are dropped for that period.
    With ``all_lags`` every previously observed outcome is balanced.
    """

    include_covariate: bool = True
    n_lags: int = 1
    all_lags: bool = False

    def __post_init__(self):
        if self.n_lags < 1 and not self.all_lags:
            raise ValueError(f"n_lags must be at least 1, got {self.n_lags}")

    def _lags(self, t):
        return t if self.all_lags else min(self.n_lags, t)

    def dim(self, t, covariate_dim):
        return (covariate_dim if self.include_covariate else 0) + self._lags(t)

    def __call__(self, t, X, Y):
        n = Y.shape[0]
        parts = []
        if self.include_covariate and X.shape[2]:
            parts.append(X[:, t, :])
        k = self._lags(t)
        if k:
            parts.append(Y[:, t - k:t][:, ::-1])
        if not parts:
            return np.zeros((n, 0))
        return np.column_stack(parts).astype(float, copy=False)

    def describe(self):
        return {"kind": "lagged_outcome", **asdict(self)}


def lagged_outcome_balance_spec(include_covariate: bool = True, n_lags: int = 1) -> LaggedOutcomeBalance:
    return LaggedOutcomeBalance(include_covariate=include_covariate, n_lags=n_lags)


def all_previous_outcomes_balance_spec(include_covariate: bool = False) -> LaggedOutcomeBalance:
    return LaggedOutcomeBalance(include_covariate=include_covariate, n_lags=1, all_lags=True)


def balance_spec_from_description(desc: dict | None) -> BalanceSpec | None:
    if desc is None:
        return None
    desc = dict(desc)
    kind = desc.pop("kind", None)
    if kind != "lagged_outcome":
        raise ValueError(f"unknown balance spec kind {kind!r}")
    return LaggedOutcomeBalance(**desc)


# ---------------------------------------------------------------------------
# Policies


@dataclass(frozen=True)
class DesignPolicy:
    """Which assignment rule runs each period.

    The acceptance threshold is either fixed (``threshold``) or given as a
    target acceptance probability (``acceptance``), in which case period
    ``t`` uses ``chi2_quantile(acceptance, d_t)`` for its dimension ``d_t``.
    """

    kind: str = "cr"
    threshold: float | None = None
    acceptance: float | None = None
    max_draws: int = DEFAULT_MAX_DRAWS
    balance: BalanceSpec | None = None
    first_period: str = "cr"
    distance: str = "mahalanobis"

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.threshold is not None and self.acceptance is not None:
            raise ValueError("give either threshold or acceptance, not both")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.acceptance is not None and not 0 < self.acceptance < 1:
            raise ValueError(f"acceptance must lie in (0, 1), got {self.acceptance}")
        if int(self.max_draws) != self.max_draws or self.max_draws < 1:
            raise ValueError(f"max_draws must be a positive integer, got {self.max_draws}")
        if self.first_period not in ("cr", "rerandomize"):
            raise ValueError(f"first_period must be 'cr' or 'rerandomize', got {self.first_period!r}")
        if self.distance not in _METRICS:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.rerandomizes and self.balance is None:
            raise ValueError(f"policy {self.kind!r} needs a balance spec")

    @property
    def rerandomizes(self) -> bool:
        return self.kind in ("srsb", "blocked_srsb")

    @property
    def blocked(self) -> bool:
        return self.kind in ("blocked_cr", "blocked_srsb")

    def threshold_for(self, d: int) -> float:
        if not self.rerandomizes:
            return math.inf
        if self.acceptance is not None:
            return chi2_quantile(self.acceptance, d)
        return math.inf if self.threshold is None else float(self.threshold)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "acceptance": self.acceptance,
            "max_draws": self.max_draws,
            "balance": None if self.balance is None else self.balance.describe(),
            "first_period": self.first_period,
            "distance": self.distance,
        }

    @classmethod
    def from_description(cls, desc: dict) -> "DesignPolicy":
        desc = dict(desc)
        desc["balance"] = balance_spec_from_description(desc.get("balance"))
        if desc.get("threshold") is not None:
            desc["threshold"] = float(desc["threshold"])
        return cls(**desc)


# ---------------------------------------------------------------------------
# One period


@dataclass(frozen=True)
class PeriodDraw:
    """Outcome of one period's assignment step.

    ``distances`` holds one value for unblocked rules and ``(block 1, block 0)``
    for blocked ones.
    """

    assignment: np.ndarray
    distances: tuple
    draws: int
    fallback: bool

    @property
    def distance(self) -> float:
        return float(sum(self.distances))


def draw_complete_randomization(n_units: int, rng) -> np.ndarray:
    """Uniformly random column with exactly ``n_units / 2`` ones."""
    if n_units % 2 or n_units < 2:
        raise ValueError(f"complete randomization needs an even number of units, got {n_units}")
    rng = as_generator(rng)
    w = np.zeros(n_units, dtype=np.int8)
    w[rng.permutation(n_units)[: n_units // 2]] = 1
    return w


def _metric(H, group_size, distance) -> QuadraticMetric:
    return _METRICS[distance](scaled_covariance(H, group_size))


def _as_matrix(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    return H[:, None] if H.ndim == 1 else H


def rerandomize_period(H, threshold: float, max_draws: int, rng, distance: str = "mahalanobis") -> PeriodDraw:
    """Draw balanced candidates until one has imbalance distance below ``threshold``.

    If none is accepted within ``max_draws`` candidates the closest one seen
    is returned (first one on ties) and ``fallback`` is set.
    """
    H = _as_matrix(H)
    n = H.shape[0]
    if n % 2 or n < 2:
        raise ValueError(f"rerandomization needs an even number of units, got {n}")
    if int(max_draws) != max_draws or max_draws < 1:
        raise ValueError(f"max_draws must be a positive integer, got {max_draws}")
    rng = as_generator(rng)
    metric = _metric(H, n, distance)
    if math.isinf(threshold):
        w = draw_complete_randomization(n, rng)
        return PeriodDraw(w, (metric(imbalance_vector(H, w)),), 1, False)
    rows, dist, draws, fallback = _kernels.search_unblocked(
        rng, np.ascontiguousarray(H), metric.precision, metric.null_projector, float(threshold),
        int(max_draws), OFF_SPAN_TOL)
    w = np.zeros(n, dtype=np.int8)
    w[rows] = 1
    return PeriodDraw(w, (float(dist),), int(draws), bool(fallback))


def _check_previous(prev, n):
    prev = np.asarray(prev).astype(np.int8).reshape(-1)
    if n % 4:
        raise ValueError(f"blocked designs need N divisible by 4, got {n}")
    if prev.shape[0] != n or not np.isin(prev, (0, 1)).all() or prev.sum() * 2 != n:
        raise ValueError("previous assignment must be a balanced 0/1 column of length N")
    return prev


def blocked_rerandomize_period(H, prev_assignment, threshold: float, max_draws: int, rng,
                               distance: str = "mahalanobis") -> PeriodDraw:
    """Rerandomize within the groups defined by the previous assignment.

    Exactly ``N/4`` units are treated in each group. A candidate is accepted
    when both within-group distances are below ``threshold``; the fallback
    keeps the candidate with the smallest summed distance.
    """
    H = _as_matrix(H)
    n = H.shape[0]
    prev = _check_previous(prev_assignment, n)
    if int(max_draws) != max_draws or max_draws < 1:
        raise ValueError(f"max_draws must be a positive integer, got {max_draws}")
    rng = as_generator(rng)
    idx1 = np.flatnonzero(prev == 1)
    idx0 = np.flatnonzero(prev == 0)
    H1, H0 = np.ascontiguousarray(H[idx1]), np.ascontiguousarray(H[idx0])
    m1 = _metric(H1, len(idx1), distance)
    m0 = _metric(H0, len(idx0), distance)
    w = np.zeros(n, dtype=np.int8)
    if math.isinf(threshold):
        w[idx1] = draw_complete_randomization(len(idx1), rng)
        w[idx0] = draw_complete_randomization(len(idx0), rng)
        d1 = m1(imbalance_vector(H1, w[idx1]))
        d0 = m0(imbalance_vector(H0, w[idx0]))
        return PeriodDraw(w, (d1, d0), 1, False)
    rows1, rows0, d1, d0, draws, fallback = _kernels.search_blocked(
        rng, H1, m1.precision, m1.null_projector, H0, m0.precision, m0.null_projector,
        float(threshold), int(max_draws), OFF_SPAN_TOL)
    w[idx1[rows1]] = 1
    w[idx0[rows0]] = 1
    return PeriodDraw(w, (float(d1), float(d0)), int(draws), bool(fallback))


def draw_blocked_complete_randomization(prev_assignment, rng) -> np.ndarray:
    prev = _check_previous(prev_assignment, len(prev_assignment))
    rng = as_generator(rng)
    w = np.zeros(prev.shape[0], dtype=np.int8)
    for g in (1, 0):
        idx = np.flatnonzero(prev == g)
        w[idx] = draw_complete_randomization(len(idx), rng)
    return w


# ---------------------------------------------------------------------------
# Experiment loop


@dataclass
class Trajectory:
    """Everything recorded by one run of a design.

    ``distances`` is ``(T, 2)``: column 0 holds the unblocked distance or the
    block-1 distance, column 1 the block-0 distance (NaN when unused).
    """

    W: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    distances: np.ndarray
    draws: np.ndarray
    fallback: np.ndarray
    regime: str
    policy: DesignPolicy
    meta: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return self.W.shape[0]

    @property
    def n_periods(self) -> int:
        return self.W.shape[1]

    def to_dict(self) -> dict:
        return {
            "format": TRAJECTORY_FORMAT,
            "version": TRAJECTORY_VERSION,
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "covariate_dim": self.X.shape[2],
            "regime": self.regime,
            "policy": self.policy.describe(),
            "W": ["".join("1" if v else "0" for v in row) for row in self.W],
            "Y": self.Y.tolist(),
            "X": self.X.tolist(),
            "diagnostics": {
                "distances": [[None if math.isnan(v) else v for v in row] for row in self.distances.tolist()],
                "draws": self.draws.tolist(),
                "fallback": self.fallback.tolist(),
            },
            "meta": self.meta,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        if data.get("format") != TRAJECTORY_FORMAT:
            raise ValueError(f"not a trajectory document: format={data.get('format')!r}")
        if data.get("version") != TRAJECTORY_VERSION:
            raise ValueError(f"unsupported trajectory version {data.get('version')}")
        n, T = data["n_units"], data["n_periods"]
        W = np.array([[c == "1" for c in row] for row in data["W"]], dtype=np.int8).reshape(n, T)
        diag = data["diagnostics"]
        dist = np.array([[math.nan if v is None else v for v in row] for row in diag["distances"]],
                        dtype=float).reshape(T, 2)
        return cls(
            W=W,
            Y=np.array(data["Y"], dtype=float).reshape(n, T),
            X=np.array(data["X"], dtype=float).reshape(n, T, data["covariate_dim"]),
            distances=dist,
            draws=np.array(diag["draws"], dtype=np.int64),
            fallback=np.array(diag["fallback"], dtype=bool),
            regime=data["regime"],
            policy=DesignPolicy.from_description(data["policy"]),
            meta=data.get("meta", {}),
        )

    @classmethod
    def from_json(cls, text_or_path) -> "Trajectory":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls.from_dict(json.loads(text))


def run_experiment(oracle: PotentialOutcomes, policy: DesignPolicy, rng) -> Trajectory:
    """Run ``policy`` period by period against ``oracle``.

    At period ``t`` the balancing variables see covariates through ``t`` and
    outcomes through ``t - 1``; the period's assignment is drawn, then that
    period's outcomes are observed.
    """
    rng = as_generator(rng)
    n, T = oracle.n_units, oracle.n_periods
    if n % 2:
        raise ValueError(f"designs need an even number of units, got {n}")
    if policy.blocked and n % 4:
        raise ValueError(f"policy {policy.kind!r} needs N divisible by 4, got {n}")
    X = oracle.covariates
    W = np.zeros((n, T), dtype=np.int8)
    Y = np.zeros((n, T))
    distances = np.full((T, 2), math.nan)
    draws = np.ones(T, dtype=np.int64)
    fallback = np.zeros(T, dtype=bool)

    for t in range(T):
        H = None
        if policy.rerandomizes and (t > 0 or policy.kind == "srsb" or policy.first_period == "rerandomize"):
            Y_seen = Y[:, :t]
            Y_seen.setflags(write=False)
            H = _as_matrix(policy.balance(t, X[:, : t + 1], Y_seen))
            if H.shape != (n, policy.balance.dim(t, X.shape[2])):
                raise ValueError(f"balance spec returned shape {H.shape} at period {t}")
            Y_seen.setflags(write=True)
            if H.shape[1] == 0:
                H = None

        if t > 0 and policy.blocked:
            if H is None:
                w = draw_blocked_complete_randomization(W[:, t - 1], rng)
            else:
                res = blocked_rerandomize_period(H, W[:, t - 1], policy.threshold_for(H.shape[1]),
                                                 policy.max_draws, rng, policy.distance)
                w = res.assignment
                distances[t] = res.distances
                draws[t], fallback[t] = res.draws, res.fallback
        elif H is not None:
            res = rerandomize_period(H, policy.threshold_for(H.shape[1]), policy.max_draws, rng,
                                     policy.distance)
            w = res.assignment
            distances[t, 0] = res.distances[0]
            draws[t], fallback[t] = res.draws, res.fallback
        else:
            w = draw_complete_randomization(n, rng)

        W[:, t] = w
        Y[:, t] = oracle.observe(t, W)

    return Trajectory(W, Y, np.asarray(X), distances, draws, fallback, oracle.carryover, policy)
