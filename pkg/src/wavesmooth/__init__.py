"""Counterfactual wave-smoothing emission benchmark.

Pipeline: gridded speed fields -> virtual trajectories (RK4 through a
bicubic-interpolated field) -> constrained-QP smoothed benchmark
trajectories -> operating-mode emissions -> gap-budget sweeps and
aggregated reduction reports.
"""

from .emissions import (
    OpModeRateTable,
    VspParams,
    classify_opmode,
    emission_delta,
    estimate_emissions,
    synthetic_rate_table,
    vsp,
)
from .errors import WavesmoothError
from .harness import BenchmarkConfig, run_day
from .smoother import (
    QpSolution,
    SmoothingProblem,
    SolverSettings,
    build_problem,
    objective_value,
    smooth,
    solve,
    solve_sweep,
)
from .speed_field import (
    SpeedField,
    WaveScenario,
    load_field,
    sample_speed,
    save_field,
    synthesize_field,
)
from .trajectory import (
    Kinematics,
    Trajectory,
    integrate_many,
    integrate_trajectory,
    kinematics,
    load_trajectory,
    preprocess_reference,
    resample_1hz,
    save_trajectory,
    seed_schedule,
)
from .units import convert

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig",
    "Kinematics",
    "OpModeRateTable",
    "QpSolution",
    "SmoothingProblem",
    "SolverSettings",
    "SpeedField",
    "Trajectory",
    "VspParams",
    "WaveScenario",
    "WavesmoothError",
    "build_problem",
    "classify_opmode",
    "convert",
    "emission_delta",
    "estimate_emissions",
    "integrate_many",
    "integrate_trajectory",
    "kinematics",
    "load_field",
    "load_trajectory",
    "objective_value",
    "preprocess_reference",
    "resample_1hz",
    "run_day",
    "sample_speed",
    "save_field",
    "save_trajectory",
    "seed_schedule",
    "smooth",
    "solve",
    "solve_sweep",
    "synthesize_field",
    "synthetic_rate_table",
    "vsp",
]
