"""Canonical physical units and exact conversion factors.

Everything inside the pipeline runs in SI: positions in meters, time in
seconds, speeds in m/s, accelerations in m/s^2, VSP in kW/tonne, emission
rates in g/h.  Miles and mph exist only at I/O boundaries and inside the
operating-mode classifier, and every such conversion funnels through
:func:`convert` so no other module carries a literal unit factor.
"""

from .errors import UnitError

METERS_PER_MILE = 1609.344  # international mile, exact by definition
MPS_PER_MPH = 0.44704  # exact: 1609.344 m / 3600 s
SECONDS_PER_HOUR = 3600.0
SECONDS_PER_MINUTE = 60.0

# tag -> (dimension, factor to the canonical unit of that dimension)
_UNITS = {
    "m": ("length", 1.0),
    "meter": ("length", 1.0),
    "km": ("length", 1000.0),
    "mile": ("length", METERS_PER_MILE),
    "mi": ("length", METERS_PER_MILE),
    "s": ("time", 1.0),
    "second": ("time", 1.0),
    "min": ("time", SECONDS_PER_MINUTE),
    "h": ("time", SECONDS_PER_HOUR),
    "hour": ("time", SECONDS_PER_HOUR),
    "m/s": ("speed", 1.0),
    "mps": ("speed", 1.0),
    "mph": ("speed", MPS_PER_MPH),
    "m/s^2": ("acceleration", 1.0),
    "mps2": ("acceleration", 1.0),
    "mph/s": ("acceleration", MPS_PER_MPH),
}


def supported_units() -> dict:
    """Return a copy of the tag -> (dimension, factor) registry."""
    return dict(_UNITS)


def convert(value: float, from_unit: str, to_unit: str) -> float:
    """Convert ``value`` between two unit tags of the same dimension.

    Conversion is a single multiply and divide by exact factors, so
    round trips are reproducible to within one ulp.

    Raises:
        UnitError: unknown tag or dimension mismatch.
    """
    try:
        dim_from, f_from = _UNITS[from_unit]
    except KeyError:
        raise UnitError(f"unknown unit tag {from_unit!r}") from None
    try:
        dim_to, f_to = _UNITS[to_unit]
    except KeyError:
        raise UnitError(f"unknown unit tag {to_unit!r}") from None
    if dim_from != dim_to:
        raise UnitError(
            f"cannot convert {from_unit!r} ({dim_from}) to {to_unit!r} ({dim_to})"
        )
    if from_unit == to_unit:
        return float(value)
    return float(value) * f_from / f_to
