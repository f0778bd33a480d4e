"""Replication runner and summary statistics."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..design import run_experiment
from ..estimate import (block_conservative_variance, rerandomization_variance, sate_carryover,
                        sate_no_carryover, wald_interval)
from ..population import DGP_BUILDERS
from ..streams import DESIGN, POPULATION, stream
from .config import ConfigError, ScenarioConfig

SUMMARY_FIELDS = ("scenario", "design", "axis", "axis_value", "bias", "variance", "rmse", "ci_length",
                  "coverage", "fallback_rate", "mean_draws", "seconds")


@dataclass
class SummaryRow:
    scenario: str
    design: str
    axis: str
    axis_value: float
    bias: float
    variance: float
    rmse: float
    ci_length: float
    coverage: float
    fallback_rate: float
    mean_draws: float
    seconds: float
    replications: int = 0
    estimand: float = math.nan
    bias_se: float = math.nan
    rmse_se: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReplicateRecord:
    design: str
    axis_value: float
    replicate: int
    estimate: float
    truth: float
    ci_lo: float
    ci_hi: float
    fallback_rate: float
    mean_draws: float
    seconds: float

    @property
    def error(self) -> float:
        return self.estimate - self.truth


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    rows: list
    details: list
    population_digests: dict = field(default_factory=dict)

    def row(self, design: str, axis_value) -> SummaryRow:
        for r in self.rows:
            if r.design == design and r.axis_value == axis_value:
                return r
        raise KeyError((design, axis_value))

    def errors(self, design: str, axis_value) -> np.ndarray:
        return np.array([d.error for d in self.details if d.design == design and d.axis_value == axis_value])

    def estimates(self, design: str, axis_value) -> np.ndarray:
        return np.array([d.estimate for d in self.details if d.design == design and d.axis_value == axis_value])


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("SWITCHLAB_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def population_seed(master: int, grid_index: int, replicate: int | None = None) -> int:
    key = (POPULATION, grid_index) if replicate is None else (POPULATION, grid_index, replicate + 1)
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, np.uint32)[0])


def build_population(cfg: ScenarioConfig, grid_index: int, replicate: int | None = None):
    n, T, params = cfg.point(cfg.values[grid_index])
    seed = population_seed(cfg.seed, grid_index, replicate)
    try:
        return DGP_BUILDERS[cfg.dgp](n, T, seed=seed, **params)
    except TypeError as exc:
        raise ConfigError("dgp.params", str(exc)) from None


def _regime(cfg, oracle):
    if cfg.estimator == "auto":
        return "none" if oracle.carryover == "none" else "first"
    return "none" if cfg.estimator == "no_carryover" else "first"


def run_replicate(cfg: ScenarioConfig, oracle, grid_index: int, design_index: int, replicate: int) -> ReplicateRecord:
    start = time.perf_counter()
    design = cfg.designs[design_index]
    rng = stream(cfg.seed, DESIGN, grid_index, design_index, replicate)
    traj = run_experiment(oracle, design.policy, rng)
    regime = _regime(cfg, oracle)
    if regime == "none":
        est = sate_no_carryover(traj)
    else:
        est = sate_carryover(traj, ratio=cfg.estimator == "carryover_ratio")

    inf = cfg.inference
    lo = hi = math.nan
    if inf.variance == "rerandomization" and regime == "none":
        lo, hi = wald_interval(est.estimate, rerandomization_variance(traj), inf.level)
    else:
        series = est.per_period[~np.isnan(est.per_period)]
        if series.shape[0] >= inf.block_size:
            rep = block_conservative_variance(series, inf.block_size, inf.predictor, regime, inf.level,
                                              est.estimate)
            lo, hi = rep.lo, rep.hi

    periods = slice(None) if regime == "none" else slice(1, None)
    return ReplicateRecord(
        design=design.name,
        axis_value=cfg.values[grid_index],
        replicate=replicate,
        estimate=est.estimate,
        truth=oracle.truth.sate,
        ci_lo=lo,
        ci_hi=hi,
        fallback_rate=float(traj.fallback[periods].mean()),
        mean_draws=float(traj.draws[periods].mean()),
        seconds=time.perf_counter() - start,
    )


def summarize(records, scenario: str, design: str, axis: str, axis_value) -> SummaryRow:
    """Aggregate replicate records of one grid cell.

    ``variance`` is the (1/M) variance of the errors, so ``rmse**2 == bias**2 + variance``.
    """
    err = np.array([r.error for r in records])
    M = err.shape[0]
    bias = float(err.mean())
    variance = float(np.mean((err - bias) ** 2))
    mse = float(np.mean(err**2))
    rmse = math.sqrt(mse)
    lo = np.array([r.ci_lo for r in records])
    hi = np.array([r.ci_hi for r in records])
    truth = np.array([r.truth for r in records])
    has_ci = ~np.isnan(lo)
    ci_length = float(np.mean(hi[has_ci] - lo[has_ci])) if has_ci.any() else math.nan
    coverage = float(np.mean((lo[has_ci] <= truth[has_ci]) & (truth[has_ci] <= hi[has_ci]))) \
        if has_ci.any() else math.nan
    bias_se = float(err.std(ddof=1) / math.sqrt(M)) if M > 1 else math.nan
    mse_se = float(np.std(err**2, ddof=1) / math.sqrt(M)) if M > 1 else math.nan
    rmse_se = mse_se / (2.0 * rmse) if M > 1 and rmse > 0 else math.nan
    return SummaryRow(
        scenario=scenario, design=design, axis=axis, axis_value=axis_value, bias=bias, variance=variance,
        rmse=rmse, ci_length=ci_length, coverage=coverage,
        fallback_rate=float(np.mean([r.fallback_rate for r in records])),
        mean_draws=float(np.mean([r.mean_draws for r in records])),
        seconds=float(sum(r.seconds for r in records)),
        replications=M, estimand=float(truth.mean()), bias_se=bias_se, rmse_se=rmse_se,
    )


def run_scenario(cfg: ScenarioConfig, workers: int | None = None, progress=None) -> ScenarioResult:
    """Run every grid point x design x replicate of ``cfg``.

    The population at a grid point is built once and shared by every design
    and replicate (unless ``redraw_population``). Streams are keyed by
    ``(seed, grid, design, replicate)``, so results do not depend on the
    number of workers.
    """
    if cfg.seed is None:
        raise ConfigError("seed", "a master seed is required (config field or --seed)")
    n_workers = worker_count(workers)
    details, rows, digests = [], [], {}

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        for g, value in enumerate(cfg.values):
            shared = None if cfg.redraw_population else build_population(cfg, g)
            if shared is not None:
                digests[g] = shared.digest()
            for k, design in enumerate(cfg.designs):
                def task(rep, g=g, k=k, shared=shared):
                    oracle = shared if shared is not None else build_population(cfg, g, rep)
                    return run_replicate(cfg, oracle, g, k, rep)

                records = list(pool.map(task, range(cfg.replications)))
                details.extend(records)
                rows.append(summarize(records, cfg.scenario, design.name, cfg.axis, value))
                if progress is not None:
                    progress(rows[-1])
    return ScenarioResult(cfg, rows, details, digests)


def slope_fit(x, y) -> tuple[float, float]:
    """OLS of ``log(y)`` on ``log(x)``; returns ``(slope, intercept)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.shape[0] < 3:
        raise ValueError(f"need at least 3 grid points, got {x.shape[0]}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError("grid values are all equal")
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(slope), float(intercept)
