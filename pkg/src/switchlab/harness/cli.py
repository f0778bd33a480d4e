"""Command line entry point: ``switchlab <verb> ...``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from ..design import Trajectory, run_experiment
from ..estimate import block_conservative_variance, rerandomization_variance, sate_carryover, sate_no_carryover, \
    wald_interval
from ..infer import randomization_pvalue
from ..streams import DESIGN, stream
from .config import ConfigError, load_config, preset_names
from .output import OutputError, emit_outputs, read_summary
from .runner import build_population, run_scenario, slope_fit

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _csv_numbers(text):
    try:
        return [float(v) if any(c in v for c in ".eE") else int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args):
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, replications=args.replications,
                             values=args.values)
    if cfg.seed is None:
        raise ConfigError("seed", "no seed in the config; pass --seed")
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.designs:
        keep = set(args.designs)
        missing = keep - {d.name for d in cfg.designs}
        if missing:
            raise ConfigError("designs", f"unknown design name(s) {sorted(missing)}")
        cfg = cfg.with_overrides(designs=tuple(d for d in cfg.designs if d.name in keep))

    def progress(row):
        if not args.quiet:
            print(f"{row.design:>16s} {cfg.axis}={row.axis_value:<8g} rmse={row.rmse:.5g} "
                  f"bias={row.bias:+.4g} cover={row.coverage:.3f} fallback={row.fallback_rate:.3f}",
                  file=sys.stderr)

    result = run_scenario(cfg, workers=args.workers, progress=progress)
    out = args.out or cfg.output.dir or "."
    formats = args.formats.split(",") if args.formats else cfg.output.formats
    detail = args.detail or cfg.output.detail
    meta = {"scenario": cfg.scenario, "dgp": cfg.dgp, "seed": cfg.seed, "replications": cfg.replications,
            "population_digests": {str(k): v for k, v in result.population_digests.items()}}
    paths = emit_outputs(result.rows, out, formats, stem=cfg.scenario,
                         details=result.details if detail else None, meta=meta)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    names = [d.name for d in cfg.designs]
    if args.design not in names:
        raise ConfigError("designs", f"unknown design {args.design!r}; have {names}")
    if not 0 <= args.grid_index < len(cfg.values):
        raise ConfigError("grid.values", f"grid index {args.grid_index} out of range")
    k = names.index(args.design)
    oracle = build_population(cfg, args.grid_index)
    traj = run_experiment(oracle, cfg.designs[k].policy, stream(cfg.seed, DESIGN, args.grid_index, k, args.replicate))
    traj.meta.update({"scenario": cfg.scenario, "design": args.design, "grid_index": args.grid_index,
                      "replicate": args.replicate, "seed": cfg.seed, "population_digest": oracle.digest()})
    if args.out:
        traj.to_json(args.out)
        print(args.out)
    else:
        print(traj.to_json())
    return EXIT_OK


def _nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def cmd_replay(args) -> int:
    traj = Trajectory.from_json(args.trajectory)
    regime = args.regime or traj.regime
    report = {"n_units": traj.n_units, "n_periods": traj.n_periods, "regime": regime,
              "fallback_rate": float(traj.fallback.mean()), "mean_draws": float(traj.draws.mean())}
    if regime == "none":
        est = sate_no_carryover(traj)
    else:
        est = sate_carryover(traj, ratio=args.ratio)
    report.update(est.to_dict())
    series = est.per_period[~np.isnan(est.per_period)]
    if series.shape[0] >= args.block_size:
        vr = block_conservative_variance(series, args.block_size, "scaled_mean", "none" if regime == "none" else
                                         "first", args.level, est.estimate)
        report["block_variance"] = {"variance": vr.variance, "lo": vr.lo, "hi": vr.hi,
                                    "block_size": vr.block_size}
    if regime == "none":
        v = rerandomization_variance(traj)
        lo, hi = wald_interval(est.estimate, v, args.level)
        report["rerandomization_variance"] = {"variance": v, "lo": lo, "hi": hi}
    report["level"] = args.level
    print(json.dumps({k: _nan_to_none(v) for k, v in report.items()}, indent=2))
    return EXIT_OK


def cmd_infer(args) -> int:
    traj = Trajectory.from_json(args.trajectory)
    res = randomization_pvalue(traj, args.delta, draws=args.draws, rng=args.seed,
                               alternative=args.alternative, centered=args.centered)
    doc = res.to_dict()
    if not args.full:
        doc.pop("simulated")
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_slope(args) -> int:
    rows = read_summary(args.summary)
    designs = sorted({r.design for r in rows}) if not args.design else [args.design]
    out = []
    for name in designs:
        sel = sorted((r for r in rows if r.design == name), key=lambda r: r.axis_value)
        if not sel:
            raise ValueError(f"no rows for design {name!r}")
        slope, intercept = slope_fit([r.axis_value for r in sel], [getattr(r, args.metric) for r in sel])
        out.append({"design": name, "axis": sel[0].axis, "metric": args.metric, "slope": slope,
                    "intercept": intercept, "points": len(sel)})
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="switchlab", description="Switchback experiment simulations.")
    sub = p.add_subparsers(dest="verb", required=True)

    def config_flags(sp):
        sp.add_argument("config", help=f"YAML file or preset name ({', '.join(preset_names())})")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--replications", "-M", type=int, help="replications per grid cell")
        sp.add_argument("--values", type=_csv_numbers, help="comma-separated grid values")

    sp = sub.add_parser("simulate", help="run a scenario grid and write summary tables")
    config_flags(sp)
    sp.add_argument("--out", "-o", help="output directory")
    sp.add_argument("--formats", help="comma-separated subset of csv,json")
    sp.add_argument("--detail", action="store_true", help="also write per-replicate records")
    sp.add_argument("--designs", nargs="+", help="only run these design names")
    sp.add_argument("--workers", type=int, help="worker threads (capped by SWITCHLAB_THREADS)")
    sp.add_argument("--quiet", "-q", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="run one replicate and write its trajectory as JSON")
    config_flags(sp)
    sp.add_argument("--design", required=True)
    sp.add_argument("--grid-index", type=int, default=0)
    sp.add_argument("--replicate", type=int, default=0)
    sp.add_argument("--out", "-o")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("infer", help="randomization p-value for a constant additive effect")
    sp.add_argument("trajectory")
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--draws", type=int, default=199)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    sp.add_argument("--centered", action="store_true", help="use the statistic shifted by delta")
    sp.add_argument("--full", action="store_true", help="include the simulated statistics")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("replay", help="recompute estimates and intervals from a trajectory")
    sp.add_argument("trajectory")
    sp.add_argument("--regime", choices=("none", "first"))
    sp.add_argument("--ratio", action="store_true", help="ratio form of the stay contrast")
    sp.add_argument("--block-size", type=int, default=8)
    sp.add_argument("--level", type=float, default=0.95)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("slope", help="log-log slope of a metric against the grid axis")
    sp.add_argument("summary", help="summary CSV or JSON")
    sp.add_argument("--design")
    sp.add_argument("--metric", default="rmse", choices=("rmse", "variance", "ci_length"))
    sp.set_defaults(func=cmd_slope)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OutputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
