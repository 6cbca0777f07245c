"""Command-line front end.

Subcommands: ``synth``, ``trajectories``, ``smooth``, ``emit``,
``benchmark``, ``report``.  Distances and speeds on benchmark-facing
flags use human units with suffixed names (``--gap-mi``,
``--speed-filter-mph``); conversion happens only here at the boundary.
Exit codes: 0 success, 1 runtime/data error, 2 usage error.
"""

import argparse
import csv
import datetime
import json
import os
import sys
from dataclasses import replace

from . import units
from .config import AppConfig, effective_config_dict, load_config
from .emissions import estimate_emissions, load_rate_table
from .errors import ConfigError, WavesmoothError
from .harness import (
    DayFragment,
    TrajectoryOutcome,
    hexbin_reduction,
    run_day,
    sweep_tradeoff,
    write_report,
)
from .smoother import build_problem, solve
from .speed_field import (
    DEFAULT_DT_GRID_S,
    DEFAULT_DX_GRID_M,
    WaveScenario,
    load_field,
    save_field,
    synthesize_field,
)
from .trajectory import (
    integrate_many,
    load_trajectory,
    preprocess_reference,
    save_trajectory,
    seed_schedule,
)


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _apply_solver_flags(cfg: AppConfig, args) -> AppConfig:
    overrides = {}
    if getattr(args, "solver_tol", None) is not None:
        overrides["tolerance"] = args.solver_tol
    if getattr(args, "solver_max_iter", None) is not None:
        overrides["max_iterations"] = args.solver_max_iter
    if getattr(args, "solver_rho", None) is not None:
        overrides["rho"] = args.solver_rho
    if getattr(args, "solver_alpha", None) is not None:
        overrides["alpha"] = args.solver_alpha
    if overrides:
        cfg.solver = replace(cfg.solver, **overrides)
    return cfg


def _add_solver_flags(parser):
    parser.add_argument("--solver-tol", type=float, help="solver tolerance (scaled units)")
    parser.add_argument("--solver-max-iter", type=int, help="solver iteration cap")
    parser.add_argument("--solver-rho", type=float, help="ADMM penalty parameter")
    parser.add_argument("--solver-alpha", type=float, help="ADMM over-relaxation")


def cmd_synth(args) -> int:
    scenario = WaveScenario(
        base_speed=args.base,
        wave_count=args.waves,
        wave_amplitude=args.amplitude,
        wave_width_t=args.width_t,
        wave_width_x=args.width_x,
        wave_propagation_speed=args.prop_speed,
        free_flow_noise=args.noise,
        seed=args.seed,
    )
    fld = synthesize_field(
        scenario,
        duration=args.duration,
        length=args.length,
        dt_grid=args.dt,
        dx_grid=args.dx,
        lane=args.lane,
        date_label=args.date,
    )
    save_field(fld, args.output)
    n_t, n_x = fld.extent
    print(f"wrote {args.output}: {n_t}x{n_x} grid, lane {fld.lane}, date {fld.date_label}")
    return 0


def cmd_trajectories(args) -> int:
    keep = round(1.0 / args.step)
    if abs(args.step * keep - 1.0) > 1e-9:
        raise ConfigError("--step must divide 1 s so output can be 1 Hz")
    fld = load_field(args.field, speed_units=args.units)
    seeds = seed_schedule(fld, args.interval)
    trajs = integrate_many(fld, seeds, step=args.step, keep_every=keep)
    os.makedirs(args.out_dir, exist_ok=True)
    written = 0
    degenerate = 0
    for i, traj in enumerate(trajs):
        if traj is None:
            degenerate += 1
            continue
        save_trajectory(traj, os.path.join(args.out_dir, f"traj_{i:05d}.txt"))
        written += 1
    print(f"wrote {written} trajectory files ({degenerate} degenerate seeds skipped)")
    return 0


def cmd_smooth(args) -> int:
    cfg = _apply_solver_flags(load_config(args.config), args)
    traj = load_trajectory(args.trajectory)
    gap = units.convert(args.gap_mi, "mile", "m")
    clean = preprocess_reference(traj)
    if clean.max_correction > 0.01:
        print(
            f"note: reference corrected by up to {clean.max_correction:.6f} m "
            "to remove reversing",
            file=sys.stderr,
        )
    lam = args.lam if args.lam is not None else cfg.benchmark.lam
    problem = build_problem(clean, lam, gap)
    solution = solve(problem, settings=cfg.solver)
    stats = {
        "status": solution.status,
        "iterations": solution.iterations,
        "objective": solution.objective,
        "primal_residual": solution.primal_residual,
        "dual_residual": solution.dual_residual,
        "lam": lam,
        "gap_m": gap,
        "preprocess_correction_m": clean.max_correction,
    }
    print(json.dumps(stats, indent=2, sort_keys=True))
    if solution.status != "optimal":
        print(f"error: solver returned {solution.status}", file=sys.stderr)
        return 1
    bench = replace(
        clean, positions=solution.x, source_tag="benchmark", gap_budget=gap
    )
    save_trajectory(bench, args.output)
    return 0


def cmd_emit(args) -> int:
    cfg = load_config(args.config)
    traj = load_trajectory(args.trajectory)
    table = load_rate_table(args.rates)
    result = estimate_emissions(traj, cfg.vsp, table)
    payload = {
        "totals_g": result.totals,
        "opmode_histogram": {str(k): v for k, v in result.opmode_histogram.items()},
        "sample_count": result.sample_count,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _parse_manifest(path: str) -> list:
    """Manifest lines: ``field_path[,lane[,date]]``; ``#`` comments allowed."""
    entries = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) > 3:
                raise ConfigError(f"manifest line {lineno}: too many fields")
            entry = {"path": parts[0], "lane": None, "date": None}
            if len(parts) > 1 and parts[1]:
                try:
                    entry["lane"] = int(parts[1])
                except ValueError:
                    raise ConfigError(
                        f"manifest line {lineno}: lane must be an integer"
                    ) from None
            if len(parts) > 2 and parts[2]:
                entry["date"] = parts[2]
            entries.append(entry)
    if not entries:
        raise ConfigError("manifest lists no speed fields")
    return entries


def cmd_benchmark(args) -> int:
    cfg = _apply_solver_flags(load_config(args.config), args)
    bench_overrides = {}
    if args.lam is not None:
        bench_overrides["lam"] = args.lam
    if args.gap_mi:
        bench_overrides["gap_budgets"] = tuple(
            units.convert(g, "mile", "m") for g in args.gap_mi
        )
    if args.speed_filter_mph is not None:
        bench_overrides["speed_filter"] = units.convert(
            args.speed_filter_mph, "mph", "m/s"
        )
    if args.seed_interval is not None:
        bench_overrides["seed_interval"] = args.seed_interval
    if bench_overrides:
        cfg.benchmark = replace(cfg.benchmark, **bench_overrides)

    # fail-fast: parse and validate every input before any work starts
    entries = _parse_manifest(args.manifest)
    table = load_rate_table(args.rates)
    fields = []
    for entry in entries:
        fld = load_field(entry["path"], speed_units=args.units)
        if entry["lane"] is not None:
            fld = replace(fld, lane=entry["lane"])
        if entry["date"] is not None:
            fld = replace(fld, date_label=entry["date"])
        if cfg.benchmark.lanes and fld.lane not in cfg.benchmark.lanes:
            continue
        fields.append(fld)

    os.makedirs(args.out_dir, exist_ok=True)
    fragments = []
    for fld in fields:
        fragment = run_day(
            fld,
            cfg.benchmark,
            cfg.vsp,
            table,
            settings=cfg.solver,
            jobs=args.jobs,
        )
        fragments.append(fragment)
        print(
            f"{fragment.day} lane {fragment.lane}: "
            f"{fragment.seeds_total} seeds, {fragment.eligible} eligible, "
            f"{len(fragment.records)} comparisons, {len(fragment.skips)} skips"
        )
    effective = effective_config_dict(cfg)
    effective["inputs"] = {
        "manifest": [e["path"] for e in entries],
        "rates": args.rates,
    }
    report = write_report(
        os.path.join(args.out_dir, "report.json"),
        os.path.join(args.out_dir, "records.csv"),
        fragments,
        cfg.benchmark,
        effective,
        _timestamp(),
    )
    print(f"wrote {os.path.join(args.out_dir, 'report.json')} and records.csv")
    return 0 if report else 1


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    by_day: dict = {}
    with open(args.records, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                reduction = {}
                empirical = {}
                benchmark = {}
                for p in ("CO2", "CO", "HC", "NOx"):
                    lower = p.lower()
                    raw = row[f"{lower}_reduction_pct"]
                    reduction[p] = float(raw) if raw else None
                    empirical[p] = float(row[f"{lower}_empirical_g"])
                    benchmark[p] = float(row[f"{lower}_benchmark_g"])
                rec = TrajectoryOutcome(
                    day=row["day"],
                    lane=int(row["lane"]),
                    seed_time=float(row["seed_time"]),
                    mean_speed=float(row["mean_speed"]),
                    speed_std=float(row["speed_std"]),
                    gap_budget=float(row["gap_budget_m"]),
                    empirical_g=empirical,
                    benchmark_g=benchmark,
                    reduction_pct=reduction,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad records row: {exc}") from None
            by_day.setdefault((rec.day, rec.lane), []).append(rec)
    fragments = []
    for (day, lane), records in sorted(by_day.items()):
        eligible = len({r.seed_time for r in records})
        fragment = DayFragment(
            day=day, lane=lane, seeds_total=eligible, eligible=eligible
        )
        fragment.records = records
        fragments.append(fragment)
    curves = sweep_tradeoff(fragments)
    payload = {
        "schema": "wavesmooth-aggregate-v1",
        "generated_at": _timestamp(),
        "source": args.records,
        "tradeoff": [
            {"lane": lane, "pollutant": pollutant, "points": [[g, m] for g, m in pts]}
            for (lane, pollutant), pts in sorted(curves.items())
        ],
        "hexbin": [],
    }
    gaps = sorted({r.gap_budget for f in fragments for r in f.records})
    for gap in gaps:
        records = [r for f in fragments for r in f.records if r.gap_budget == gap]
        cells = hexbin_reduction(
            records,
            cfg.benchmark.hexbin_mean_speed_width,
            cfg.benchmark.hexbin_speed_std_width,
        )
        payload["hexbin"].append(
            {
                "gap_m": gap,
                "pollutant": "CO2",
                "cells": [
                    {
                        "mean_speed": list(c.mean_speed_range),
                        "speed_std": list(c.speed_std_range),
                        "count": c.count,
                        "mean_reduction": c.mean_reduction,
                    }
                    for c in cells
                ],
            }
        )
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output:
        from .fileio import atomic_write_text

        atomic_write_text(args.output, text)
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavesmooth",
        description="Counterfactual wave-smoothing emission benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic wave speed field")
    p.add_argument("--waves", type=int, required=True, help="number of waves")
    p.add_argument("--amplitude", type=float, required=True, help="wave depth, m/s")
    p.add_argument("--base", type=float, required=True, help="free-flow speed, m/s")
    p.add_argument("--duration", type=float, required=True, help="field duration, s")
    p.add_argument("--length", type=float, required=True, help="segment length, m")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--width-t", type=float, default=900.0, help="wave time spread, s")
    p.add_argument("--width-x", type=float, default=200.0, help="wave space spread, m")
    p.add_argument(
        "--prop-speed", type=float, default=-4.5,
        help="wave propagation speed, m/s (negative = upstream)",
    )
    p.add_argument("--noise", type=float, default=0.0, help="free-flow noise std, m/s")
    p.add_argument("--dt", type=float, default=DEFAULT_DT_GRID_S, help="grid step, s")
    p.add_argument("--dx", type=float, default=DEFAULT_DX_GRID_M, help="grid step, m")
    p.add_argument("--lane", type=int, default=1)
    p.add_argument("--date", default="synthetic")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("trajectories", help="integrate seeded 1 Hz trajectories")
    p.add_argument("field", help="speed field file")
    p.add_argument("--interval", type=float, default=4.0, help="seed spacing, s")
    p.add_argument("--step", type=float, default=0.1, help="integrator step, s")
    p.add_argument("--units", choices=("mps", "mph"), default="mps",
                   help="speed units of the ingested field")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_trajectories)

    p = sub.add_parser("smooth", help="solve the smoothing QP for one trajectory")
    p.add_argument("trajectory", help="reference trajectory file")
    p.add_argument("--lam", type=float, default=None, help="smoothness weight")
    p.add_argument("--gap-mi", type=float, required=True, help="maximum gap, miles")
    p.add_argument("--config", default=None)
    _add_solver_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("emit", help="estimate emissions for one 1 Hz trajectory")
    p.add_argument("trajectory")
    p.add_argument("--rates", required=True, help="rate table CSV")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("benchmark", help="run the full benchmark over a manifest")
    p.add_argument("--manifest", required=True,
                   help="text file: field_path[,lane[,date]] per line")
    p.add_argument("--rates", required=True, help="rate table CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--units", choices=("mps", "mph"), default="mps")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--gap-mi", type=float, action="append", default=None,
                   help="gap budget in miles; repeat for a sweep")
    p.add_argument("--speed-filter-mph", type=float, default=None)
    p.add_argument("--seed-interval", type=float, default=None, help="seconds")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="recompute aggregations from a records CSV")
    p.add_argument("records", help="records.csv from a benchmark run")
    p.add_argument("--config", default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except WavesmoothError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
