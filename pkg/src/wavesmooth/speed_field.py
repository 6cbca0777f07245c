"""Gridded mean speed fields: storage, file I/O, interpolation, synthesis.

A :class:`SpeedField` holds traffic speed on a regular (time, position)
grid.  Queries between grid nodes are answered by bicubic interpolation
with the Catmull-Rom kernel, which passes exactly through the nodes and is
C1-continuous.  Because the kernel needs a 4x4 stencil, the usable query
domain is the grid extent inset by one cell on every border; queries
outside that inset domain are rejected rather than extrapolated.

Synthetic fields with moving low-speed waves are generated by
:func:`synthesize_field` as a stand-in for instrumented freeway data.
"""

from dataclasses import dataclass

import numpy as np

from . import units
from .errors import DomainError, FormatError, RejectedInputError
from .fileio import atomic_write_text

#: Interpolation kernel used between grid nodes.  Only "catmull-rom"
#: (tension 0.5) is implemented; the name is kept as data so an
#: alternative kernel can be registered without touching call sites.
INTERPOLATION_KERNEL = "catmull-rom"

#: Default grid resolution: 4 s columns, 0.02 mile rows.
DEFAULT_DT_GRID_S = 4.0
DEFAULT_DX_GRID_M = units.convert(0.02, "mile", "m")

_HEADER_KEYS = ("dt_grid_s", "dx_grid_m", "t0_s", "x0_m", "lane", "date")
_DOMAIN_EPS = 1e-9


@dataclass(frozen=True)
class SpeedField:
    """Mean traffic speed on a regular (time, position) grid.

    ``values[i][j]`` is the speed in m/s at time ``t0 + i*dt_grid`` and
    position ``x0 + j*dx_grid``.  Fields are immutable after construction;
    concurrent readers are safe.
    """

    t0: float
    dt_grid: float
    x0: float
    dx_grid: float
    values: np.ndarray
    lane: int = 1
    date_label: str = "unknown"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise RejectedInputError("speed values must form a 2-D grid")
        if vals.shape[0] < 4 or vals.shape[1] < 4:
            raise RejectedInputError(
                f"grid must be at least 4x4 for bicubic interpolation, got {vals.shape}"
            )
        if self.dt_grid <= 0 or self.dx_grid <= 0:
            raise RejectedInputError("grid resolutions must be positive")
        if not np.all(np.isfinite(vals)):
            raise RejectedInputError("speeds must be finite")
        if np.any(vals < 0):
            raise RejectedInputError("speeds must be non-negative")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def extent(self) -> tuple:
        """(n_t, n_x) grid shape."""
        return self.values.shape

    @property
    def inset_bounds(self) -> tuple:
        """((t_min, t_max), (x_min, x_max)) of the queryable domain.

        One cell is trimmed from every border so the interpolation
        stencil always lies inside the grid.
        """
        n_t, n_x = self.values.shape
        return (
            (self.t0 + self.dt_grid, self.t0 + (n_t - 2) * self.dt_grid),
            (self.x0 + self.dx_grid, self.x0 + (n_x - 2) * self.dx_grid),
        )

    def contains(self, t: float, x: float) -> bool:
        (t_lo, t_hi), (x_lo, x_hi) = self.inset_bounds
        return t_lo - _DOMAIN_EPS <= t <= t_hi + _DOMAIN_EPS and (
            x_lo - _DOMAIN_EPS <= x <= x_hi + _DOMAIN_EPS
        )


def _catmull_rom(p0, p1, p2, p3, u):
    # Tension-0.5 cubic through p1 (u=0) and p2 (u=1); exact on nodes and
    # on constant/linear data.
    return p1 + 0.5 * u * (
        p2
        - p0
        + u * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + u * (3.0 * (p1 - p2) + p3 - p0))
    )


def _sample_batch(field: SpeedField, t, x, clamp: bool):
    """Bicubic interpolation at arrays of query points.

    With ``clamp=False`` out-of-domain points raise :class:`DomainError`;
    with ``clamp=True`` they are projected onto the inset boundary (used
    internally by the trajectory integrator whose committed samples stay
    inside the domain).  Interpolates along the space axis first, then
    along time, and clamps the result below at 0 m/s.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    n_t, n_x = field.values.shape
    st = (t - field.t0) / field.dt_grid
    sx = (x - field.x0) / field.dx_grid
    if clamp:
        st = np.clip(st, 1.0, n_t - 2.0)
        sx = np.clip(sx, 1.0, n_x - 2.0)
    else:
        bad = (
            (st < 1.0 - _DOMAIN_EPS)
            | (st > n_t - 2.0 + _DOMAIN_EPS)
            | (sx < 1.0 - _DOMAIN_EPS)
            | (sx > n_x - 2.0 + _DOMAIN_EPS)
        )
        if np.any(bad):
            idx = int(np.argmax(bad))
            t_bad = float(np.ravel(t)[idx]) if t.ndim else float(t)
            x_bad = float(np.ravel(x)[idx]) if x.ndim else float(x)
            raise DomainError(
                f"query (t={t_bad}, x={x_bad}) outside interpolable domain",
                valid_range=field.inset_bounds,
            )
        st = np.clip(st, 1.0, n_t - 2.0)
        sx = np.clip(sx, 1.0, n_x - 2.0)
    it = np.clip(np.floor(st).astype(np.int64), 1, n_t - 3)
    ix = np.clip(np.floor(sx).astype(np.int64), 1, n_x - 3)
    ut = st - it
    ux = sx - ix
    v = field.values
    rows = [
        _catmull_rom(
            v[it + r, ix - 1], v[it + r, ix], v[it + r, ix + 1], v[it + r, ix + 2], ux
        )
        for r in (-1, 0, 1, 2)
    ]
    out = _catmull_rom(rows[0], rows[1], rows[2], rows[3], ut)
    return np.maximum(out, 0.0)


def sample_speed(field: SpeedField, t: float, x: float) -> float:
    """Interpolated speed (m/s) at time ``t`` and position ``x``.

    Exact on grid nodes and on constant fields; Catmull-Rom overshoot
    below zero is clamped to 0 since the field is a speed.

    Raises:
        DomainError: the query lies outside the inset extent.
    """
    if INTERPOLATION_KERNEL != "catmull-rom":
        raise RejectedInputError(f"unknown kernel {INTERPOLATION_KERNEL!r}")
    return float(_sample_batch(field, np.asarray([t]), np.asarray([x]), clamp=False)[0])


def sample_speed_many(field: SpeedField, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sample_speed` over equal-length query arrays."""
    return _sample_batch(field, t, x, clamp=False)


# ---------------------------------------------------------------------------
# file format


def save_field(fld: SpeedField, path: str) -> None:
    """Write a speed field in the canonical text format.

    Header lines ``#key=value`` (fixed order), then one comma-separated
    row of speeds in m/s per time index.  Floats use ``repr`` so a
    load/save round trip is byte-identical.
    """
    lines = [
        f"#dt_grid_s={fld.dt_grid!r}",
        f"#dx_grid_m={fld.dx_grid!r}",
        f"#t0_s={fld.t0!r}",
        f"#x0_m={fld.x0!r}",
        f"#lane={fld.lane}",
        f"#date={fld.date_label}",
    ]
    for row in fld.values:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_field(path: str, speed_units: str = "m/s") -> SpeedField:
    """Load a speed field file, validating structure cell by cell.

    ``speed_units`` may be ``"mph"`` to convert ingested speeds to m/s
    (grid geometry headers are always seconds/meters).

    Raises:
        FormatError: malformed header, non-rectangular rows, unparsable
            or negative speed; the message names the offending location.
    """
    headers = {}
    rows = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read speed field file: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows:
                    raise FormatError(
                        "header line after data rows", location=f"line {lineno}"
                    )
                if "=" not in line:
                    raise FormatError("malformed header", location=f"line {lineno}")
                key, _, value = line[1:].partition("=")
                headers[key.strip()] = value.strip()
                continue
            parts = line.split(",")
            row = []
            for col, part in enumerate(parts):
                try:
                    speed = float(part)
                except ValueError:
                    raise FormatError(
                        f"unparsable speed {part!r}",
                        location=f"data row {len(rows)}, column {col}",
                    ) from None
                if not np.isfinite(speed):
                    raise FormatError(
                        "speed must be finite",
                        location=f"data row {len(rows)}, column {col}",
                    )
                if speed_units == "mph":
                    speed = units.convert(speed, "mph", "m/s")
                elif speed_units not in ("m/s", "mps"):
                    raise RejectedInputError(f"unsupported speed units {speed_units!r}")
                if speed < 0:
                    raise FormatError(
                        f"negative speed {speed!r}",
                        location=f"data row {len(rows)}, column {col}",
                    )
                row.append(speed)
            if rows and len(row) != len(rows[0]):
                raise FormatError(
                    f"row has {len(row)} cells, expected {len(rows[0])}",
                    location=f"data row {len(rows)}",
                )
            rows.append(row)
    for key in _HEADER_KEYS:
        if key not in headers:
            raise FormatError(f"missing header {key!r}", location="header")
    try:
        fld = SpeedField(
            t0=float(headers["t0_s"]),
            dt_grid=float(headers["dt_grid_s"]),
            x0=float(headers["x0_m"]),
            dx_grid=float(headers["dx_grid_m"]),
            values=np.asarray(rows, dtype=float),
            lane=int(headers["lane"]),
            date_label=headers["date"],
        )
    except ValueError as exc:
        raise FormatError(str(exc), location="header") from None
    return fld


# ---------------------------------------------------------------------------
# synthetic wave fields


@dataclass(frozen=True)
class WaveScenario:
    """Parameters of a synthetic stop-and-go wave field.

    Each wave is a Gaussian speed dip of depth ``wave_amplitude`` centered
    on the moving line ``x = x_c + wave_propagation_speed * (t - t_c)``
    with spatial spread ``wave_width_x`` and temporal spread
    ``wave_width_t``.  Negative propagation speed moves the wave upstream.
    """

    base_speed: float
    wave_count: int
    wave_amplitude: float = 0.0
    wave_width_t: float = 900.0
    wave_width_x: float = 200.0
    wave_propagation_speed: float = -4.5
    free_flow_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.base_speed < 0:
            raise RejectedInputError("base_speed must be non-negative")
        if self.wave_count < 0:
            raise RejectedInputError("wave_count must be non-negative")
        if not 0.0 <= self.wave_amplitude <= self.base_speed:
            raise RejectedInputError(
                "wave_amplitude must lie in [0, base_speed] so speeds stay non-negative"
            )
        if self.wave_width_t <= 0 or self.wave_width_x <= 0:
            raise RejectedInputError("wave widths must be positive")
        if self.free_flow_noise < 0:
            raise RejectedInputError("free_flow_noise must be non-negative")


def synthesize_field(
    scenario: WaveScenario,
    duration: float,
    length: float,
    dt_grid: float = DEFAULT_DT_GRID_S,
    dx_grid: float = DEFAULT_DX_GRID_M,
    lane: int = 1,
    date_label: str = "synthetic",
) -> SpeedField:
    """Generate a wave field over ``duration`` seconds x ``length`` meters.

    Wave centers are drawn from the scenario seed and snapped to grid
    nodes, so the deepest point of an isolated wave equals
    ``base_speed - wave_amplitude`` exactly at its center node.  The same
    seed always produces the same field.
    """
    if duration <= 0 or length <= 0:
        raise RejectedInputError("extent must be positive")
    n_t = int(np.floor(duration / dt_grid + _DOMAIN_EPS)) + 1
    n_x = int(np.floor(length / dx_grid + _DOMAIN_EPS)) + 1
    if n_t < 4 or n_x < 4:
        raise RejectedInputError("extent too small for a 4x4 grid at this resolution")
    t = np.arange(n_t) * dt_grid
    x = np.arange(n_x) * dx_grid
    tt = t[:, None]
    xx = x[None, :]
    vals = np.full((n_t, n_x), float(scenario.base_speed))
    rng = np.random.default_rng(scenario.seed)
    if scenario.wave_count > 0:
        t_centers = np.sort(rng.uniform(0.15, 0.85, scenario.wave_count)) * duration
        x_centers = rng.uniform(0.25, 0.80, scenario.wave_count) * length
        # snap to grid nodes so each dip bottoms out exactly at a sample
        t_centers = np.round(t_centers / dt_grid) * dt_grid
        x_centers = np.round(x_centers / dx_grid) * dx_grid
        for t_c, x_c in zip(t_centers, x_centers):
            line = x_c + scenario.wave_propagation_speed * (tt - t_c)
            dip = scenario.wave_amplitude * np.exp(
                -0.5 * ((xx - line) / scenario.wave_width_x) ** 2
                - 0.5 * ((tt - t_c) / scenario.wave_width_t) ** 2
            )
            vals -= dip
    if scenario.free_flow_noise > 0:
        vals += rng.normal(0.0, scenario.free_flow_noise, vals.shape)
    np.clip(vals, 0.0, None, out=vals)
    return SpeedField(
        t0=0.0,
        dt_grid=dt_grid,
        x0=0.0,
        dx_grid=dx_grid,
        values=vals,
        lane=lane,
        date_label=date_label,
    )
