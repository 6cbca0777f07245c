"""Configuration file parsing and the effective-config echo.

Config files are INI key/value sections read with :mod:`configparser`:

    [solver]
    tolerance = 1e-6
    max_iterations = 50000
    rho = 0.1
    sigma = 1e-6
    alpha = 1.6
    check_interval = 25
    polish = true

    [vsp]
    A = 0.156461
    B = 0.00200193
    C = 0.000492646
    M_s = 1.4788
    M_f = 1.4788
    g = 9.8
    theta = 0.0

    [benchmark]
    lam = 10.0
    gap_budgets_mi = 0.01, 0.02, 0.05, 0.1, 0.2, 0.5
    speed_filter_mph = 50.0
    seed_interval_s = 4.0
    lanes =
    quantile_bands = 0.05, 0.25, 0.75, 0.95
    hexbin_mean_speed_width_mps = 2.0
    hexbin_speed_std_width_mps = 0.5

Every key is optional; unknown sections or keys are rejected so typos
fail fast.  CLI flags override file values, and the merged result is
echoed into every report for provenance.
"""

import configparser
from dataclasses import asdict, dataclass, field, replace

from . import units
from .emissions import VspParams
from .errors import ConfigError
from .harness import BenchmarkConfig
from .smoother import SolverSettings

_KNOWN = {
    "solver": {
        "tolerance": float,
        "max_iterations": int,
        "rho": float,
        "sigma": float,
        "alpha": float,
        "check_interval": int,
        "polish": "bool",
    },
    "vsp": {
        "A": float,
        "B": float,
        "C": float,
        "M_s": float,
        "M_f": float,
        "g": float,
        "theta": float,
    },
    "benchmark": {
        "lam": float,
        "gap_budgets_mi": "float_list",
        "speed_filter_mph": float,
        "seed_interval_s": float,
        "lanes": "int_list",
        "quantile_bands": "float_list",
        "hexbin_mean_speed_width_mps": float,
        "hexbin_speed_std_width_mps": float,
    },
}


@dataclass
class AppConfig:
    solver: SolverSettings = field(default_factory=SolverSettings)
    vsp: VspParams = field(default_factory=VspParams)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)


def _parse_value(kind, raw: str, where: str):
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        items = [part.strip() for part in raw.split(",") if part.strip()]
        if kind == "float_list":
            return tuple(float(p) for p in items)
        if kind == "int_list":
            return tuple(int(p) for p in items)
        raise AssertionError(kind)
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {exc}") from None


def load_config(path: str | None) -> AppConfig:
    """Parse an INI config file into typed sections (defaults when None)."""
    cfg = AppConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown config section [{section}]")
        known = _KNOWN[section]
        values = {}
        for key, raw in parser.items(section):
            matched = next((k for k in known if k.lower() == key.lower()), None)
            if matched is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[matched] = _parse_value(known[matched], raw, f"[{section}] {key}")
        if section == "solver":
            cfg.solver = replace(cfg.solver, **values)
        elif section == "vsp":
            cfg.vsp = replace(cfg.vsp, **values)
        else:
            bench_kwargs = {}
            if "lam" in values:
                bench_kwargs["lam"] = values["lam"]
            if "gap_budgets_mi" in values:
                bench_kwargs["gap_budgets"] = tuple(
                    units.convert(g, "mile", "m") for g in values["gap_budgets_mi"]
                )
            if "speed_filter_mph" in values:
                bench_kwargs["speed_filter"] = units.convert(
                    values["speed_filter_mph"], "mph", "m/s"
                )
            if "seed_interval_s" in values:
                bench_kwargs["seed_interval"] = values["seed_interval_s"]
            if "lanes" in values:
                bench_kwargs["lanes"] = values["lanes"]
            if "quantile_bands" in values:
                bench_kwargs["quantile_bands"] = values["quantile_bands"]
            if "hexbin_mean_speed_width_mps" in values:
                bench_kwargs["hexbin_mean_speed_width"] = values[
                    "hexbin_mean_speed_width_mps"
                ]
            if "hexbin_speed_std_width_mps" in values:
                bench_kwargs["hexbin_speed_std_width"] = values[
                    "hexbin_speed_std_width_mps"
                ]
            cfg.benchmark = replace(cfg.benchmark, **bench_kwargs)
    return cfg


def effective_config_dict(cfg: AppConfig) -> dict:
    """Flatten the merged configuration for the report echo."""
    return {
        "solver": asdict(cfg.solver),
        "vsp": asdict(cfg.vsp),
        "benchmark": {
            "lam": cfg.benchmark.lam,
            "gap_budgets_m": list(cfg.benchmark.gap_budgets),
            "speed_filter_mps": cfg.benchmark.speed_filter,
            "seed_interval_s": cfg.benchmark.seed_interval,
            "lanes": list(cfg.benchmark.lanes),
            "quantile_bands": list(cfg.benchmark.quantile_bands),
            "hexbin_mean_speed_width_mps": cfg.benchmark.hexbin_mean_speed_width,
            "hexbin_speed_std_width_mps": cfg.benchmark.hexbin_speed_std_width,
        },
    }
