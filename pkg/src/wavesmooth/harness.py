"""Batch benchmark orchestration and aggregation.

A "day" is one speed field file.  For each day the harness seeds virtual
vehicles, resamples them to 1 Hz, keeps those with mean speed below the
configured filter, smooths each across an ascending gap-budget sweep
(warm-started), and compares per-pollutant emissions of the empirical and
benchmark trajectories.  Per-trajectory outcomes feed three aggregations:
gap trade-off curves, quantile bands, and rectangular (mean speed x speed
std) bins of mean reduction.  References that cannot be processed are
counted under an explicit skip reason, never silently dropped.

All per-trajectory work items are independent; with ``jobs > 1`` they are
distributed over a process pool, and results are reduced in seed order so
the report is identical for any job count.
"""

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import units
from .emissions import (
    POLLUTANTS,
    OpModeRateTable,
    VspParams,
    emission_delta,
    estimate_emissions,
)
from .errors import RejectedInputError
from .fileio import atomic_write_text
from .smoother import (
    STATUS_OPTIMAL,
    SolverSettings,
    solve_sweep,
)
from .speed_field import SpeedField
from .trajectory import (
    Trajectory,
    integrate_many,
    kinematics,
    preprocess_reference,
    seed_schedule,
)

REPORT_SCHEMA = "wavesmooth-report-v1"

#: Gap sweep used by default: 0.01 to 0.5 miles.
DEFAULT_GAP_BUDGETS_M = tuple(
    units.convert(g, "mile", "m") for g in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)
)

SKIP_DEGENERATE = "degenerate"
SKIP_SPEED_FILTER = "speed_filter"
SKIP_SOLVER = "solver_nonoptimal"


@dataclass(frozen=True)
class BenchmarkConfig:
    """Experiment protocol knobs.

    Defaults: lam 10, the 0.01-0.5 mile gap sweep, eligibility below
    50 mph mean speed, seeding every 4 s.
    """

    lam: float = 10.0
    gap_budgets: tuple = DEFAULT_GAP_BUDGETS_M
    speed_filter: float = units.convert(50.0, "mph", "m/s")
    seed_interval: float = 4.0
    lanes: tuple = ()
    quantile_bands: tuple = (0.05, 0.25, 0.75, 0.95)
    hexbin_mean_speed_width: float = 2.0
    hexbin_speed_std_width: float = 0.5

    def __post_init__(self):
        gaps = tuple(float(g) for g in self.gap_budgets)
        if any(g < 0 for g in gaps):
            raise RejectedInputError("gap budgets must be non-negative")
        if any(b >= a for b, a in zip(gaps, gaps[1:])):
            raise RejectedInputError("gap budgets must be strictly increasing")
        bands = tuple(float(q) for q in self.quantile_bands)
        if any(not 0.0 < q < 1.0 for q in bands):
            raise RejectedInputError("quantile levels must lie in (0, 1)")
        if tuple(sorted(bands)) != bands:
            raise RejectedInputError("quantile levels must be sorted")
        if self.hexbin_mean_speed_width <= 0 or self.hexbin_speed_std_width <= 0:
            raise RejectedInputError("hexbin widths must be positive")
        if self.seed_interval <= 0:
            raise RejectedInputError("seed interval must be positive")
        object.__setattr__(self, "gap_budgets", gaps)
        object.__setattr__(self, "quantile_bands", bands)
        object.__setattr__(self, "lanes", tuple(int(l) for l in self.lanes))


@dataclass
class TrajectoryOutcome:
    """One (trajectory, gap budget) comparison."""

    day: str
    lane: int
    seed_time: float
    mean_speed: float
    speed_std: float
    gap_budget: float
    empirical_g: dict
    benchmark_g: dict
    reduction_pct: dict


@dataclass
class SkipRecord:
    day: str
    lane: int
    seed_time: float
    gap_budget: float | None
    reason: str


@dataclass
class DayFragment:
    """Everything measured on one (day, lane) field."""

    day: str
    lane: int
    seeds_total: int
    eligible: int
    records: list = field(default_factory=list)
    skips: list = field(default_factory=list)


def _process_reference(args):
    """Worker: sweep one reference across all budgets and compare emissions.

    Module-level so process pools can pickle it.  Returns (records,
    skips) with floats independent of worker placement.
    """
    (day, lane, seed_time, positions, t_start, lam, gaps, vsp_params, table,
     settings) = args
    ref = Trajectory(t_start=t_start, dt=1.0, positions=np.asarray(positions),
                     lane=lane)
    clean = preprocess_reference(ref)
    kin = kinematics(clean)
    records = []
    skips = []
    empirical = estimate_emissions(clean, vsp_params, table)
    solutions = solve_sweep(clean, lam, gaps, settings=settings)
    for gap, solution in zip(gaps, solutions):
        if solution.status != STATUS_OPTIMAL:
            skips.append(
                SkipRecord(day, lane, seed_time, gap,
                           f"{SKIP_SOLVER}:{solution.status}")
            )
            continue
        bench_traj = Trajectory(
            t_start=t_start,
            dt=1.0,
            positions=solution.x,
            lane=lane,
            source_tag="benchmark",
            gap_budget=gap,
        )
        benchmark = estimate_emissions(bench_traj, vsp_params, table)
        records.append(
            TrajectoryOutcome(
                day=day,
                lane=lane,
                seed_time=seed_time,
                mean_speed=kin.mean_speed,
                speed_std=kin.speed_std,
                gap_budget=gap,
                empirical_g=dict(empirical.totals),
                benchmark_g=dict(benchmark.totals),
                reduction_pct=emission_delta(empirical, benchmark),
            )
        )
    return records, skips


def run_day(
    fld: SpeedField,
    config: BenchmarkConfig,
    vsp_params: VspParams,
    table: OpModeRateTable,
    settings: SolverSettings | None = None,
    jobs: int = 1,
    day_label: str | None = None,
) -> DayFragment:
    """Benchmark every eligible trajectory of one day's speed field."""
    settings = settings or SolverSettings()
    day = day_label if day_label is not None else fld.date_label
    seeds = seed_schedule(fld, config.seed_interval)
    fragment = DayFragment(day=day, lane=fld.lane, seeds_total=len(seeds), eligible=0)
    if not seeds:
        return fragment
    keep = max(1, int(round(1.0 / 0.1)))
    trajs = integrate_many(fld, seeds, step=0.1, keep_every=keep)
    work = []
    for (seed_time, _), traj in zip(seeds, trajs):
        if traj is None:
            fragment.skips.append(
                SkipRecord(day, fld.lane, seed_time, None, SKIP_DEGENERATE)
            )
            continue
        kin = kinematics(traj)
        if not kin.mean_speed < config.speed_filter:
            fragment.skips.append(
                SkipRecord(day, fld.lane, seed_time, None, SKIP_SPEED_FILTER)
            )
            continue
        fragment.eligible += 1
        work.append(
            (
                day,
                fld.lane,
                seed_time,
                np.asarray(traj.positions),
                traj.t_start,
                config.lam,
                tuple(config.gap_budgets),
                vsp_params,
                table,
                settings,
            )
        )
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_process_reference, work, chunksize=8))
    else:
        results = [_process_reference(item) for item in work]
    for records, skips in results:
        fragment.records.extend(records)
        fragment.skips.extend(skips)
    return fragment


# ---------------------------------------------------------------------------
# aggregations


@dataclass
class QuantileBands:
    mean: float
    bands: dict  # level -> value


def aggregate_quantiles(values, levels) -> QuantileBands:
    """Mean plus linear-interpolation quantiles of ``values``."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise RejectedInputError("cannot aggregate an empty sample")
    bands = {
        float(q): float(np.quantile(arr, q, method="linear")) for q in levels
    }
    return QuantileBands(mean=float(np.mean(arr)), bands=bands)


def sweep_tradeoff(fragments) -> dict:
    """Mean reduction per (lane, pollutant, gap budget), sorted by budget.

    Returns {(lane, pollutant): [(gap, mean reduction), ...]}; empty
    input yields empty curves.
    """
    sums: dict = {}
    counts: dict = {}
    for fragment in fragments:
        for rec in fragment.records:
            for pollutant in POLLUTANTS:
                red = rec.reduction_pct.get(pollutant)
                if red is None:
                    continue
                key = (rec.lane, pollutant, rec.gap_budget)
                sums[key] = sums.get(key, 0.0) + red
                counts[key] = counts.get(key, 0) + 1
    curves: dict = {}
    for (lane, pollutant, gap), total in sums.items():
        curves.setdefault((lane, pollutant), []).append(
            (gap, total / counts[(lane, pollutant, gap)])
        )
    for points in curves.values():
        points.sort(key=lambda p: p[0])
    return curves


@dataclass
class HexbinCell:
    mean_speed_range: tuple
    speed_std_range: tuple
    count: int
    mean_reduction: float


def hexbin_reduction(
    records,
    mean_speed_width: float,
    speed_std_width: float,
    pollutant: str = "CO2",
) -> list:
    """Rectangular binning of mean reduction over (mean speed, speed std).

    Bins are left-closed/right-open, so a value exactly on an edge lands
    in the upper bin.  Cells are returned sorted by bin index.
    """
    if mean_speed_width <= 0 or speed_std_width <= 0:
        raise RejectedInputError("bin widths must be positive")
    sums: dict = {}
    counts: dict = {}
    for rec in records:
        red = rec.reduction_pct.get(pollutant)
        if red is None:
            continue
        i = int(np.floor(rec.mean_speed / mean_speed_width))
        j = int(np.floor(rec.speed_std / speed_std_width))
        sums[(i, j)] = sums.get((i, j), 0.0) + red
        counts[(i, j)] = counts.get((i, j), 0) + 1
    cells = []
    for (i, j) in sorted(sums):
        cells.append(
            HexbinCell(
                mean_speed_range=(i * mean_speed_width, (i + 1) * mean_speed_width),
                speed_std_range=(j * speed_std_width, (j + 1) * speed_std_width),
                count=counts[(i, j)],
                mean_reduction=sums[(i, j)] / counts[(i, j)],
            )
        )
    return cells


# ---------------------------------------------------------------------------
# report assembly and serialization


def _skip_counts(skips) -> dict:
    out: dict = {}
    for skip in skips:
        out[skip.reason] = out.get(skip.reason, 0) + 1
    return out


def build_report(fragments, config: BenchmarkConfig, effective_config: dict,
                 generated_at: str) -> dict:
    """Assemble the JSON-ready report, deterministic except the timestamp."""
    fragments = sorted(fragments, key=lambda f: (f.day, f.lane))
    days = []
    for fragment in fragments:
        records = sorted(fragment.records, key=lambda r: (r.seed_time, r.gap_budget))
        per_gap = []
        for gap in config.gap_budgets:
            at_gap = [r for r in records if r.gap_budget == gap]
            gap_skips = [
                s for s in fragment.skips if s.gap_budget == gap
            ]
            entry = {
                "gap_m": gap,
                "processed": len(at_gap),
                "skipped": _skip_counts(gap_skips),
                "mean_reduction": {},
                "quantiles": {},
            }
            for pollutant in POLLUTANTS:
                reductions = [
                    r.reduction_pct[pollutant]
                    for r in at_gap
                    if r.reduction_pct[pollutant] is not None
                ]
                if reductions:
                    bands = aggregate_quantiles(reductions, config.quantile_bands)
                    entry["mean_reduction"][pollutant] = bands.mean
                    entry["quantiles"][pollutant] = {
                        f"q{level}": value for level, value in sorted(bands.bands.items())
                    }
                else:
                    entry["mean_reduction"][pollutant] = None
                    entry["quantiles"][pollutant] = None
            per_gap.append(entry)
        hexbins = []
        for gap in config.gap_budgets:
            cells = hexbin_reduction(
                [r for r in records if r.gap_budget == gap],
                config.hexbin_mean_speed_width,
                config.hexbin_speed_std_width,
            )
            hexbins.append(
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
        days.append(
            {
                "day": fragment.day,
                "lane": fragment.lane,
                "seeds_total": fragment.seeds_total,
                "eligible": fragment.eligible,
                "skipped": _skip_counts(fragment.skips),
                "per_gap": per_gap,
                "hexbin": hexbins,
            }
        )
    curves = sweep_tradeoff(fragments)
    tradeoff = [
        {
            "lane": lane,
            "pollutant": pollutant,
            "points": [[gap, mean] for gap, mean in points],
        }
        for (lane, pollutant), points in sorted(curves.items())
    ]
    return {
        "schema": REPORT_SCHEMA,
        "generated_at": generated_at,
        "config": effective_config,
        "days": days,
        "tradeoff": tradeoff,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


_CSV_COLUMNS = ["day", "lane", "seed_time", "mean_speed", "speed_std", "gap_budget_m"]
for _p in POLLUTANTS:
    _CSV_COLUMNS += [
        f"{_p.lower()}_empirical_g",
        f"{_p.lower()}_benchmark_g",
        f"{_p.lower()}_reduction_pct",
    ]


def records_to_csv(fragments) -> str:
    """Flat per-trajectory table, sorted for byte-stable output."""
    records = []
    for fragment in fragments:
        records.extend(fragment.records)
    records.sort(key=lambda r: (r.day, r.lane, r.seed_time, r.gap_budget))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for r in records:
        row = [r.day, r.lane, repr(r.seed_time), repr(r.mean_speed),
               repr(r.speed_std), repr(r.gap_budget)]
        for p in POLLUTANTS:
            red = r.reduction_pct[p]
            row += [
                repr(r.empirical_g[p]),
                repr(r.benchmark_g[p]),
                "" if red is None else repr(red),
            ]
        writer.writerow(row)
    return buf.getvalue()


def write_report(path_json: str, path_csv: str, fragments, config: BenchmarkConfig,
                 effective_config: dict, generated_at: str) -> dict:
    """Serialize both report artifacts atomically; returns the report dict."""
    report = build_report(fragments, config, effective_config, generated_at)
    atomic_write_text(path_json, report_to_json(report))
    atomic_write_text(path_csv, records_to_csv(fragments))
    return report
