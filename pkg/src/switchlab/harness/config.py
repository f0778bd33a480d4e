"""Scenario configuration: YAML in, validated dataclasses out."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from ..design import POLICY_KINDS, DesignPolicy, LaggedOutcomeBalance
from ..population import DGP_BUILDERS

AXES = ("N", "T", "rho", "tau")
ESTIMATORS = ("auto", "no_carryover", "carryover", "carryover_ratio")
VARIANCE_METHODS = ("block", "rerandomization")
FORMATS = ("csv", "json")

# grid axis -> DGP keyword for the parameter axes
_PARAM_AXIS = {
    ("rho", "ar1"): "rho_x",
    ("rho", "markov"): "rho",
    ("rho", "ar1_first_order"): "rho_x",
    ("tau", "factor"): "tau",
}
_FIRST_ORDER_DGPS = ("ar1_first_order", "heterogeneous")


class ConfigError(ValueError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class DesignConfig:
    name: str
    policy: DesignPolicy


@dataclass(frozen=True)
class InferenceConfig:
    block_size: int = 8
    level: float = 0.95
    predictor: str = "scaled_mean"
    variance: str = "block"


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    formats: tuple = ("csv", "json")
    detail: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    dgp: str
    dgp_params: dict
    n_units: int
    n_periods: int
    designs: tuple
    axis: str
    values: tuple
    replications: int = 500
    seed: int | None = None
    estimator: str = "auto"
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    redraw_population: bool = False

    def point(self, value):
        """``(n_units, n_periods, dgp_params)`` at one grid value."""
        n, T, params = self.n_units, self.n_periods, dict(self.dgp_params)
        if self.axis == "N":
            n = int(value)
        elif self.axis == "T":
            T = int(value)
        else:
            params[_PARAM_AXIS[(self.axis, self.dgp)]] = value
        return n, T, params

    def with_overrides(self, **kw) -> "ScenarioConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "values" in kw:
            kw["values"] = tuple(kw["values"])
        cfg = replace(self, **kw)
        _check_grid(cfg)
        return cfg


def _get(d, key, path, kind, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "required field is missing")
        return default
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float):
        raise ConfigError(f"{path}.{key}" if path else key,
                          f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _parse_balance(raw, path):
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = set(raw) - {"include_covariate", "n_lags", "all_lags"}
    if unknown:
        raise ConfigError(path, f"unknown field(s) {sorted(unknown)}")
    try:
        return LaggedOutcomeBalance(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_design(raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    kind = _get(raw, "kind", path, str)
    if kind not in POLICY_KINDS:
        raise ConfigError(f"{path}.kind", f"must be one of {POLICY_KINDS}, got {kind!r}")
    name = _get(raw, "name", path, str, kind)
    kw = dict(kind=kind)
    for key, typ in (("threshold", float), ("acceptance", float), ("max_draws", int),
                     ("first_period", str), ("distance", str)):
        if key in raw:
            kw[key] = _get(raw, key, path, typ)
    kw["balance"] = _parse_balance(raw.get("balance"), f"{path}.balance")
    unknown = set(raw) - {"name", "kind", "balance", "threshold", "acceptance", "max_draws", "first_period",
                          "distance"}
    if unknown:
        raise ConfigError(path, f"unknown field(s) {sorted(unknown)}")
    try:
        return DesignConfig(name, DesignPolicy(**kw))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _check_grid(cfg: ScenarioConfig):
    if cfg.replications < 1:
        raise ConfigError("replications", "must be at least 1")
    blocked = any(d.policy.blocked for d in cfg.designs) or cfg.dgp in _FIRST_ORDER_DGPS or (
        cfg.dgp == "factor" and cfg.dgp_params.get("carryover") == "first")
    for k, v in enumerate(cfg.values):
        n, T, _ = cfg.point(v)
        where = f"grid.values[{k}]" if cfg.axis in ("N", "T") else "dgp.n_units"
        if n < 2 or n % 2:
            raise ConfigError(where, f"N must be even, got {n}")
        if blocked and n % 4:
            raise ConfigError(where, f"N must be divisible by 4 for blocked designs or first-order DGPs, got {n}")
        if T < 1:
            raise ConfigError(where if cfg.axis == "T" else "dgp.n_periods", f"T must be positive, got {T}")


def parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    known = {"scenario", "dgp", "designs", "grid", "replications", "seed", "estimator", "inference", "output",
             "redraw_population"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError("<root>", f"unknown field(s) {sorted(unknown)}")
    scenario = _get(raw, "scenario", "", str, "scenario")

    dgp = _get(raw, "dgp", "", dict)
    name = _get(dgp, "name", "dgp", str)
    if name not in DGP_BUILDERS:
        raise ConfigError("dgp.name", f"must be one of {sorted(DGP_BUILDERS)}, got {name!r}")
    n_units = _get(dgp, "n_units", "dgp", int)
    n_periods = _get(dgp, "n_periods", "dgp", int)
    params = _get(dgp, "params", "dgp", dict, {})

    raw_designs = _get(raw, "designs", "", list)
    if not raw_designs:
        raise ConfigError("designs", "at least one design is required")
    designs = tuple(_parse_design(d, f"designs[{k}]") for k, d in enumerate(raw_designs))
    names = [d.name for d in designs]
    if len(set(names)) != len(names):
        raise ConfigError("designs", f"design names must be unique, got {names}")

    grid = _get(raw, "grid", "", dict, {"axis": "N", "values": [n_units]})
    axis = _get(grid, "axis", "grid", str)
    if axis not in AXES:
        raise ConfigError("grid.axis", f"must be one of {AXES}, got {axis!r}")
    if axis in ("rho", "tau") and (axis, name) not in _PARAM_AXIS:
        raise ConfigError("grid.axis", f"axis {axis!r} is not a parameter of DGP {name!r}")
    values = _get(grid, "values", "grid", list)
    if not values:
        raise ConfigError("grid.values", "at least one value is required")
    for k, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"grid.values[{k}]", f"expected a number, got {v!r}")
        if axis in ("N", "T") and int(v) != v:
            raise ConfigError(f"grid.values[{k}]", f"expected an integer, got {v!r}")

    estimator = _get(raw, "estimator", "", str, "auto")
    if estimator not in ESTIMATORS:
        raise ConfigError("estimator", f"must be one of {ESTIMATORS}, got {estimator!r}")

    inf_raw = _get(raw, "inference", "", dict, {})
    inference = InferenceConfig(
        block_size=_get(inf_raw, "block_size", "inference", int, 8),
        level=_get(inf_raw, "level", "inference", float, 0.95),
        predictor=_get(inf_raw, "predictor", "inference", str, "scaled_mean"),
        variance=_get(inf_raw, "variance", "inference", str, "block"),
    )
    if inference.block_size < 2:
        raise ConfigError("inference.block_size", "must be at least 2")
    if not 0 < inference.level < 1:
        raise ConfigError("inference.level", "must lie in (0, 1)")
    if inference.variance not in VARIANCE_METHODS:
        raise ConfigError("inference.variance", f"must be one of {VARIANCE_METHODS}")
    if inference.predictor not in ("scaled_mean", "recency"):
        raise ConfigError("inference.predictor", "must be 'scaled_mean' or 'recency'")

    out_raw = _get(raw, "output", "", dict, {})
    formats = tuple(_get(out_raw, "formats", "output", list, ["csv", "json"]))
    for k, f in enumerate(formats):
        if f not in FORMATS:
            raise ConfigError(f"output.formats[{k}]", f"must be one of {FORMATS}, got {f!r}")
    output = OutputConfig(dir=_get(out_raw, "dir", "output", str, None), formats=formats,
                          detail=_get(out_raw, "detail", "output", bool, False))

    seed = raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed", f"expected a nonnegative integer, got {seed!r}")

    cfg = ScenarioConfig(
        scenario=scenario, dgp=name, dgp_params=params, n_units=n_units, n_periods=n_periods,
        designs=designs, axis=axis, values=tuple(values),
        replications=_get(raw, "replications", "", int, 500), seed=seed, estimator=estimator,
        inference=inference, output=output,
        redraw_population=_get(raw, "redraw_population", "", bool, False),
    )
    _check_grid(cfg)
    return cfg


def preset_names() -> list[str]:
    root = resources.files("switchlab.harness") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(source) -> ScenarioConfig:
    """Load a config from a YAML path or a bundled preset name."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
    elif str(source) in preset_names():
        text = (resources.files("switchlab.harness") / "scenarios" / f"{source}.yaml").read_text()
    else:
        raise ConfigError("<file>", f"no config file or preset named {str(source)!r}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return parse_config(raw)
