import json

import numpy as np
import pytest

from oracles import groupby_mean_oracle, quantile_oracle
from wavesmooth.emissions import POLLUTANTS, VspParams, synthetic_rate_table
from wavesmooth.errors import RejectedInputError
from wavesmooth.harness import (
    BenchmarkConfig,
    DayFragment,
    TrajectoryOutcome,
    aggregate_quantiles,
    build_report,
    hexbin_reduction,
    records_to_csv,
    report_to_json,
    run_day,
    sweep_tradeoff,
)
from wavesmooth.speed_field import SpeedField, WaveScenario, synthesize_field

TABLE = synthetic_rate_table()
PARAMS = VspParams()


def small_wave_day(seed=9):
    scenario = WaveScenario(
        base_speed=24.0,
        wave_count=2,
        wave_amplitude=20.0,
        wave_width_t=400.0,
        wave_width_x=250.0,
        wave_propagation_speed=-4.2,
        free_flow_noise=0.6,
        seed=seed,
    )
    return synthesize_field(scenario, duration=2000.0, length=3000.0,
                            lane=1, date_label="2024-06-18")


def outcome(day="d", lane=1, seed_time=0.0, mean_speed=10.0, speed_std=1.0,
            gap=10.0, red=5.0):
    return TrajectoryOutcome(
        day=day, lane=lane, seed_time=seed_time, mean_speed=mean_speed,
        speed_std=speed_std, gap_budget=gap,
        empirical_g={p: 100.0 for p in POLLUTANTS},
        benchmark_g={p: 100.0 - red for p in POLLUTANTS},
        reduction_pct={p: red for p in POLLUTANTS},
    )


class TestConfig:
    def test_defaults_match_protocol(self):
        config = BenchmarkConfig()
        assert config.lam == 10.0
        assert config.speed_filter == pytest.approx(22.352)
        assert config.seed_interval == 4.0
        assert [round(g, 5) for g in config.gap_budgets] == [
            16.09344, 32.18688, 80.4672, 160.9344, 321.8688, 804.672,
        ]

    def test_gap_budgets_must_increase(self):
        with pytest.raises(RejectedInputError):
            BenchmarkConfig(gap_budgets=(10.0, 10.0))

    def test_quantiles_validated(self):
        with pytest.raises(RejectedInputError):
            BenchmarkConfig(quantile_bands=(0.0, 0.5))


class TestRunDay:
    def test_fast_field_filters_everything(self):
        fld = SpeedField(
            t0=0.0, dt_grid=4.0, x0=0.0, dx_grid=32.0,
            values=np.full((60, 40), 30.0), lane=2, date_label="fast",
        )
        config = BenchmarkConfig(seed_interval=20.0, gap_budgets=(10.0,))
        fragment = run_day(fld, config, PARAMS, TABLE)
        assert fragment.eligible == 0
        assert not fragment.records
        assert all(s.reason == "speed_filter" for s in fragment.skips)
        assert len(fragment.skips) == fragment.seeds_total

    def test_counts_reconcile_on_wave_day(self):
        fld = small_wave_day()
        config = BenchmarkConfig(seed_interval=60.0,
                                 gap_budgets=(16.09344, 160.9344))
        fragment = run_day(fld, config, PARAMS, TABLE)
        assert fragment.eligible > 0
        prefilter_skips = [s for s in fragment.skips if s.gap_budget is None]
        assert fragment.seeds_total == fragment.eligible + len(prefilter_skips)
        for gap in config.gap_budgets:
            processed = sum(1 for r in fragment.records if r.gap_budget == gap)
            solver_skips = sum(
                1 for s in fragment.skips if s.gap_budget == gap
            )
            assert processed + solver_skips == fragment.eligible
        # every processed record has a defined reduction for every pollutant
        for record in fragment.records:
            for p in POLLUTANTS:
                assert record.reduction_pct[p] is not None

    def test_zero_gap_budget_gives_exact_zero_reduction(self):
        fld = small_wave_day()
        config = BenchmarkConfig(seed_interval=120.0, gap_budgets=(0.0,))
        fragment = run_day(fld, config, PARAMS, TABLE)
        assert fragment.records
        for record in fragment.records:
            for p in POLLUTANTS:
                assert record.reduction_pct[p] == 0.0

    def test_parallel_jobs_identical(self):
        fld = small_wave_day()
        config = BenchmarkConfig(seed_interval=90.0, gap_budgets=(80.4672,))
        serial = run_day(fld, config, PARAMS, TABLE, jobs=1)
        parallel = run_day(fld, config, PARAMS, TABLE, jobs=3)
        assert len(serial.records) == len(parallel.records)
        for a, b in zip(serial.records, parallel.records):
            assert a.seed_time == b.seed_time
            assert a.empirical_g == b.empirical_g
            assert a.benchmark_g == b.benchmark_g
            assert a.reduction_pct == b.reduction_pct


class TestTradeoff:
    def test_single_budget_single_point(self):
        fragment = DayFragment(day="d", lane=1, seeds_total=1, eligible=1)
        fragment.records = [outcome(red=4.0)]
        curves = sweep_tradeoff([fragment])
        assert curves[(1, "CO2")] == [(10.0, 4.0)]

    def test_empty_fragments_empty_curves(self):
        assert sweep_tradeoff([]) == {}

    def test_non_decreasing_on_synthetic_day(self):
        fld = small_wave_day()
        config = BenchmarkConfig(seed_interval=90.0,
                                 gap_budgets=(80.4672, 321.8688))
        fragment = run_day(fld, config, PARAMS, TABLE)
        curves = sweep_tradeoff([fragment])
        points = curves[(1, "CO2")]
        assert len(points) == 2
        assert points[1][1] >= points[0][1] - 0.5

    def test_mean_matches_groupby_oracle(self):
        rng = np.random.default_rng(5)
        records = [
            outcome(seed_time=i, gap=float(rng.choice([5.0, 10.0])),
                    red=float(rng.uniform(-3.0, 12.0)))
            for i in range(40)
        ]
        fragment = DayFragment(day="d", lane=1, seeds_total=40, eligible=40)
        fragment.records = records
        curves = sweep_tradeoff([fragment])
        expected = groupby_mean_oracle(
            [(r.gap_budget, r.reduction_pct["CO2"]) for r in records]
        )
        for gap, mean in curves[(1, "CO2")]:
            assert mean == pytest.approx(expected[gap], rel=1e-12)


class TestQuantiles:
    def test_constant_sample(self):
        bands = aggregate_quantiles([7.0] * 10, (0.05, 0.25, 0.75, 0.95))
        assert bands.mean == 7.0
        assert all(v == 7.0 for v in bands.bands.values())

    def test_median_example(self):
        bands = aggregate_quantiles([0.0, 10.0, 20.0, 30.0, 40.0], (0.5,))
        assert bands.bands[0.5] == 20.0

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(11)
        values = rng.normal(5.0, 3.0, 200)
        levels = (0.05, 0.25, 0.5, 0.75, 0.95)
        bands = aggregate_quantiles(values, levels)
        for level in levels:
            assert bands.bands[level] == pytest.approx(
                quantile_oracle(values, level), rel=1e-12
            )

    def test_empty_rejected(self):
        with pytest.raises(RejectedInputError):
            aggregate_quantiles([], (0.5,))


class TestHexbin:
    def test_single_record_single_cell(self):
        cells = hexbin_reduction([outcome(mean_speed=7.3, speed_std=1.2, red=4.0)],
                                 2.0, 0.5)
        assert len(cells) == 1
        assert cells[0].count == 1
        assert cells[0].mean_reduction == 4.0
        assert cells[0].mean_speed_range == (6.0, 8.0)
        assert cells[0].speed_std_range == (1.0, 1.5)

    def test_edge_value_goes_to_upper_bin(self):
        cells = hexbin_reduction([outcome(mean_speed=8.0, speed_std=1.5, red=1.0)],
                                 2.0, 0.5)
        assert cells[0].mean_speed_range == (8.0, 10.0)
        assert cells[0].speed_std_range == (1.5, 2.0)

    def test_cell_means_match_groupby_oracle(self):
        rng = np.random.default_rng(13)
        records = [
            outcome(mean_speed=float(rng.uniform(0, 20)),
                    speed_std=float(rng.uniform(0, 5)),
                    red=float(rng.uniform(-5, 25)))
            for _ in range(300)
        ]
        cells = hexbin_reduction(records, 2.0, 0.5)
        expected = groupby_mean_oracle(
            [
                ((int(np.floor(r.mean_speed / 2.0)), int(np.floor(r.speed_std / 0.5))),
                 r.reduction_pct["CO2"])
                for r in records
            ]
        )
        assert len(cells) == len(expected)
        for cell in cells:
            key = (int(cell.mean_speed_range[0] / 2.0),
                   int(cell.speed_std_range[0] / 0.5))
            assert cell.mean_reduction == pytest.approx(expected[key], rel=1e-12)
        assert sum(c.count for c in cells) == len(records)


class TestReportSerialization:
    def fragments(self):
        fragment = DayFragment(day="2024-06-18", lane=1, seeds_total=3, eligible=2)
        fragment.records = [
            outcome(day="2024-06-18", seed_time=4.0, gap=16.09344, red=3.0),
            outcome(day="2024-06-18", seed_time=8.0, gap=16.09344, red=5.0),
        ]
        return [fragment]

    def test_report_structure_and_determinism(self):
        config = BenchmarkConfig(gap_budgets=(16.09344,))
        a = build_report(self.fragments(), config, {"k": 1}, "T")
        b = build_report(self.fragments(), config, {"k": 1}, "T")
        assert report_to_json(a) == report_to_json(b)
        day = a["days"][0]
        assert day["eligible"] == 2
        assert day["per_gap"][0]["processed"] == 2
        assert day["per_gap"][0]["mean_reduction"]["CO2"] == 4.0
        parsed = json.loads(report_to_json(a))
        assert parsed["schema"] == "wavesmooth-report-v1"

    def test_csv_columns_and_values(self):
        text = records_to_csv(self.fragments())
        lines = text.strip().split("\n")
        header = lines[0].split(",")
        assert header[:6] == ["day", "lane", "seed_time", "mean_speed",
                              "speed_std", "gap_budget_m"]
        assert "co2_reduction_pct" in header
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "2024-06-18"
        assert float(first[2]) == 4.0
