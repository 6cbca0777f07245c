"""Operating-mode emission model: VSP, mode classification, integration.

Each 1 Hz trajectory sample is classified into a discrete engine
operating mode from its speed, acceleration history and vehicle specific
power (VSP),

    VSP = (A v + B v^2 + C v^3 + M_s (a + g sin(theta)) v) / M_f,

and per-pollutant emissions are integrated from a rate table keyed by
mode id (grams/hour).  Mode ids 0 (braking) and 1 (idling) are assigned
first; the remaining ids tile the (speed, VSP) plane in three speed bands
with left-closed, right-open edges:

    speed 1-25 mph:  11 (VSP<0), 12 [0,3), 13 [3,6), 14 [6,9), 15 [9,12), 16 (>=12)
    speed 25-50 mph: 21 (VSP<0), 22 [0,3), 23 [3,6), 24 [6,9), 25 [9,12),
                     27 [12,18), 28 [18,24), 29 [24,30), 30 (>=30)
    speed >=50 mph:  33 (VSP<6), 35 [6,12), 37 [12,18), 38 [18,24),
                     39 [24,30), 40 (>=30)

Braking is instantaneous deceleration at or below -2 mph/s, or three
consecutive samples below -1 mph/s; idling is speed below 1 mph.  Speeds
in [0, 1) mph fall to the idling rule, and at 50 mph and above all VSP
below 6 maps to id 33, so the map is total.  Rate tables are external
data; a synthetic, physically plausible table ships for testing.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import units
from .errors import RateTableError, RejectedInputError
from .fileio import atomic_write_text
from .trajectory import Trajectory

POLLUTANTS = ("CO2", "CO", "HC", "NOx")

OPMODE_IDS = (
    0, 1,
    11, 12, 13, 14, 15, 16,
    21, 22, 23, 24, 25, 27, 28, 29, 30,
    33, 35, 37, 38, 39, 40,
)

BRAKING_ID = 0
IDLING_ID = 1

# braking/idling thresholds follow the usual operating-mode convention;
# expressed in SI via exact conversion so comparisons bin on mph values
HARD_BRAKE_MPS2 = units.convert(-2.0, "mph/s", "m/s^2")
SOFT_BRAKE_MPS2 = units.convert(-1.0, "mph/s", "m/s^2")
IDLE_SPEED_MPS = units.convert(1.0, "mph", "m/s")
SPEED_BAND_MID_MPS = units.convert(25.0, "mph", "m/s")
SPEED_BAND_HIGH_MPS = units.convert(50.0, "mph", "m/s")

# (vsp upper edge, id) per band; the last entry catches everything above
_LOW_BAND = ((0.0, 11), (3.0, 12), (6.0, 13), (9.0, 14), (12.0, 15), (None, 16))
_MID_BAND = (
    (0.0, 21), (3.0, 22), (6.0, 23), (9.0, 24), (12.0, 25),
    (18.0, 27), (24.0, 28), (30.0, 29), (None, 30),
)
_HIGH_BAND = ((6.0, 33), (12.0, 35), (18.0, 37), (24.0, 38), (30.0, 39), (None, 40))

GRAVITY_MPS2 = 9.8


@dataclass(frozen=True)
class VspParams:
    """Road-load coefficients and masses for the VSP formula.

    The defaults are generic light-duty car values kept as configuration
    defaults; any real study should supply its own via the ``[vsp]``
    config section.
    """

    A: float = 0.156461  # kW*s/m
    B: float = 0.00200193  # kW*s^2/m^2
    C: float = 0.000492646  # kW*s^3/m^3
    M_s: float = 1.4788  # tonnes, source mass
    M_f: float = 1.4788  # tonnes, fixed mass factor
    g: float = GRAVITY_MPS2
    theta: float = 0.0  # road grade, radians

    def __post_init__(self):
        if self.M_f <= 0:
            raise RejectedInputError("fixed mass factor must be positive")
        if self.A < 0 or self.B < 0 or self.C < 0:
            raise RejectedInputError("road load coefficients must be non-negative")


def vsp(v: float, a: float, params: VspParams) -> float:
    """Vehicle specific power in kW/tonne at speed ``v`` (m/s >= 0)."""
    if v < 0:
        raise RejectedInputError("speed must be non-negative")
    return (
        params.A * v
        + params.B * v * v
        + params.C * v * v * v
        + params.M_s * (a + params.g * np.sin(params.theta)) * v
    ) / params.M_f


def classify_opmode(
    v: float,
    a: float,
    a_prev: float | None = None,
    a_prev2: float | None = None,
    *,
    vsp_value: float,
) -> int:
    """Operating-mode id for one sample.

    ``a_prev``/``a_prev2`` are the accelerations of the two preceding
    samples, or None near the trajectory start where the three-sample
    braking rule cannot fire.
    """
    if v < 0:
        raise RejectedInputError("speed must be non-negative")
    if a <= HARD_BRAKE_MPS2:
        return BRAKING_ID
    if (
        a < SOFT_BRAKE_MPS2
        and a_prev is not None
        and a_prev2 is not None
        and a_prev < SOFT_BRAKE_MPS2
        and a_prev2 < SOFT_BRAKE_MPS2
    ):
        return BRAKING_ID
    if v < IDLE_SPEED_MPS:
        return IDLING_ID
    if v < SPEED_BAND_MID_MPS:
        band = _LOW_BAND
    elif v < SPEED_BAND_HIGH_MPS:
        band = _MID_BAND
    else:
        band = _HIGH_BAND
    for edge, mode in band:
        if edge is None or vsp_value < edge:
            return mode
    raise AssertionError("unreachable: bands are total")


@dataclass(frozen=True)
class OpModeRateTable:
    """Per-pollutant emission rate (g/h) for every operating mode.

    ``metadata`` carries informational vehicle descriptors (regulatory
    class, model-year group, age group, fuel type).  Construction
    validates completeness over all (pollutant, mode) pairs.
    """

    rates: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [
            (p, m) for p in POLLUTANTS for m in OPMODE_IDS if (p, m) not in self.rates
        ]
        if missing:
            raise RateTableError("rate table incomplete", missing=missing)
        for key, rate in self.rates.items():
            if rate < 0:
                raise RateTableError(f"negative rate for {key}")

    def rate(self, pollutant: str, opmode: int) -> float:
        return self.rates[(pollutant, opmode)]


@dataclass
class EmissionResult:
    """Integrated per-pollutant grams plus the operating-mode histogram."""

    totals: dict
    opmode_histogram: dict
    sample_count: int


def estimate_emissions(
    traj: Trajectory,
    params: VspParams,
    table: OpModeRateTable,
    prior_accels: tuple | None = None,
) -> EmissionResult:
    """Integrate emissions over the velocity samples of a 1 Hz trajectory.

    Sample k (k = 0..N-1) uses velocity v_k and acceleration a_k, with
    the final acceleration a_{N-2} reused for the last velocity sample.
    ``prior_accels`` optionally supplies (a_{-1}, a_{-2}) so the
    three-sample braking rule carries across a trajectory split; by
    default the history is absent at the start.
    """
    if abs(traj.dt - 1.0) > 1e-9:
        raise RejectedInputError("emission estimation expects a 1 Hz trajectory")
    x = traj.positions
    v = np.diff(x) / traj.dt
    if np.any(v < -1e-3):
        raise RejectedInputError("trajectory reverses; preprocess it first")
    v = np.maximum(v, 0.0)  # forgive solver-tolerance wiggle
    acc = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / (traj.dt * traj.dt)
    n = len(v)
    dt_hours = traj.dt / units.SECONDS_PER_HOUR
    totals = {p: 0.0 for p in POLLUTANTS}
    histogram = {m: 0 for m in OPMODE_IDS}

    def accel_at(k: int):
        if k < 0:
            if prior_accels is None:
                return None
            back = -k  # 1 or 2 samples before the start
            return prior_accels[back - 1] if back <= len(prior_accels) else None
        return float(acc[min(k, n - 2)])

    for k in range(n):
        a_k = accel_at(k)
        mode = classify_opmode(
            float(v[k]),
            a_k,
            accel_at(k - 1),
            accel_at(k - 2),
            vsp_value=vsp(float(v[k]), a_k, params),
        )
        histogram[mode] += 1
        for p in POLLUTANTS:
            totals[p] += table.rate(p, mode) * dt_hours
    return EmissionResult(totals=totals, opmode_histogram=histogram, sample_count=n)


def emission_delta(empirical: EmissionResult, benchmark: EmissionResult) -> dict:
    """Per-pollutant reduction percentages, empirical relative.

    ``100 * (empirical - benchmark) / empirical``; negative values are
    reported as-is, and pollutants with zero empirical total map to None
    (undefined reduction).
    """
    out = {}
    for p in POLLUTANTS:
        emp = empirical.totals[p]
        if emp == 0.0:
            out[p] = None
        else:
            out[p] = 100.0 * (emp - benchmark.totals[p]) / emp
    return out


# ---------------------------------------------------------------------------
# rate table I/O and the shipped synthetic table

# g/h per operating mode.  Within each speed band the rates increase with
# the VSP bin, superlinearly at the top end: repeated braking plus
# high-power re-acceleration must cost more than steady moderate power,
# the asymmetry that makes stop-and-go driving expensive.
_SYNTHETIC_RATES = {
    "CO2": {
        0: 5000.0, 1: 4500.0,
        11: 6000.0, 12: 8000.0, 13: 10500.0, 14: 13200.0, 15: 16200.0, 16: 20500.0,
        21: 6500.0, 22: 9000.0, 23: 12000.0, 24: 15200.0, 25: 18800.0,
        27: 24500.0, 28: 31500.0, 29: 39500.0, 30: 49000.0,
        33: 14000.0, 35: 20000.0, 37: 27000.0, 38: 34500.0, 39: 42500.0, 40: 52000.0,
    },
    "CO": {
        0: 40.0, 1: 35.0,
        11: 45.0, 12: 60.0, 13: 85.0, 14: 120.0, 15: 170.0, 16: 260.0,
        21: 50.0, 22: 70.0, 23: 100.0, 24: 145.0, 25: 210.0,
        27: 330.0, 28: 520.0, 29: 800.0, 30: 1250.0,
        33: 120.0, 35: 200.0, 37: 330.0, 38: 540.0, 39: 900.0, 40: 1500.0,
    },
    "HC": {
        0: 2.0, 1: 1.8,
        11: 2.2, 12: 2.8, 13: 3.6, 14: 4.8, 15: 6.5, 16: 9.5,
        21: 2.4, 22: 3.2, 23: 4.4, 24: 6.0, 25: 8.5,
        27: 13.0, 28: 20.0, 29: 30.0, 30: 46.0,
        33: 5.0, 35: 8.0, 37: 13.0, 38: 21.0, 39: 33.0, 40: 52.0,
    },
    "NOx": {
        0: 3.0, 1: 2.2,
        11: 3.5, 12: 5.0, 13: 7.5, 14: 11.0, 15: 16.5, 16: 25.0,
        21: 4.0, 22: 6.0, 23: 9.0, 24: 14.0, 25: 21.0,
        27: 33.0, 28: 52.0, 29: 80.0, 30: 125.0,
        33: 12.0, 35: 20.0, 37: 33.0, 38: 54.0, 39: 88.0, 40: 140.0,
    },
}


def synthetic_rate_table() -> OpModeRateTable:
    """Deterministic test table: plausible magnitudes, monotone in VSP."""
    rates = {}
    for pollutant, by_mode in _SYNTHETIC_RATES.items():
        for mode, rate in by_mode.items():
            rates[(pollutant, mode)] = rate
    return OpModeRateTable(
        rates=rates,
        metadata={
            "source": "synthetic",
            "regulatory_class": "light-duty (synthetic)",
            "model_year_group": "n/a",
            "age_group": "n/a",
            "fuel_type": "gasoline (synthetic)",
        },
    )


def save_rate_table(table: OpModeRateTable, path: str) -> None:
    """Write a rate table CSV with ``#key=value`` metadata comments."""
    lines = [f"#{k}={v}" for k, v in sorted(table.metadata.items())]
    lines.append("pollutant,opModeID,rate_g_per_hr")
    for pollutant in POLLUTANTS:
        for mode in OPMODE_IDS:
            lines.append(f"{pollutant},{mode},{table.rates[(pollutant, mode)]!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_rate_table(path: str) -> OpModeRateTable:
    """Load a rate table CSV (columns pollutant, opModeID, rate_g_per_hr).

    Raises:
        RateTableError: missing header, unparsable rows, or an incomplete
            (pollutant, mode) grid; missing keys are listed.
    """
    metadata = {}
    rates = {}
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise RateTableError(f"cannot read rate table: {exc}") from None
    with fh:
        data_lines = []
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                metadata[key.strip()] = value.strip()
                continue
            data_lines.append(line)
    if not data_lines:
        raise RateTableError("rate table file has no header row")
    reader = csv.DictReader(data_lines)
    required = {"pollutant", "opModeID", "rate_g_per_hr"}
    if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
        raise RateTableError(
            f"rate table header must contain {sorted(required)}, got {reader.fieldnames}"
        )
    for row in reader:
        try:
            key = (row["pollutant"].strip(), int(row["opModeID"]))
            rates[key] = float(row["rate_g_per_hr"])
        except (TypeError, ValueError, AttributeError):
            raise RateTableError(f"unparsable rate table row {row!r}") from None
    return OpModeRateTable(rates=rates, metadata=metadata)
