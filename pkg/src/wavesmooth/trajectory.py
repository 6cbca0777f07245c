"""Vehicle trajectories: integration through a speed field and kinematics.

Virtual vehicles follow dx/dt = v(t, x) through a :class:`SpeedField`,
integrated with fixed-step classical RK4 (default 0.1 s).  Fine-step
trajectories are resampled to 1 Hz for the emission model, preserving the
start position exactly and truncating any trailing partial second.
Discrete velocity/acceleration come from first and second differences of
the position sequence.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateTrajectoryError,
    DomainError,
    FormatError,
    RejectedInputError,
)
from .fileio import atomic_write_text
from .speed_field import SpeedField, _sample_batch

#: Internal RK4 step for trajectory integration, seconds.
DEFAULT_STEP_S = 0.1

#: Shortest usable trajectory: 3 intervals, so both endpoint velocities
#: and endpoint accelerations exist.
MIN_INTERVALS = 3

_EPS = 1e-9

SOURCE_TAGS = ("empirical", "benchmark")


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled vehicle positions.

    ``positions`` holds x_0..x_N in meters at times
    ``t_start + k * dt``.  ``gap_budget`` (meters) is set on benchmark
    trajectories only.  ``max_correction`` records the largest adjustment
    applied by :func:`preprocess_reference`, 0.0 for untouched input.
    """

    t_start: float
    dt: float
    positions: np.ndarray
    lane: int = 1
    source_tag: str = "empirical"
    gap_budget: float | None = None
    max_correction: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 1:
            raise RejectedInputError("positions must be a 1-D sequence")
        if len(pos) < MIN_INTERVALS + 1:
            raise DegenerateTrajectoryError(
                f"trajectory needs at least {MIN_INTERVALS + 1} samples, got {len(pos)}"
            )
        if not np.all(np.isfinite(pos)):
            raise RejectedInputError("positions must be finite")
        if self.dt <= 0:
            raise RejectedInputError("sample period must be positive")
        if self.source_tag not in SOURCE_TAGS:
            raise RejectedInputError(f"unknown source tag {self.source_tag!r}")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_intervals(self) -> int:
        return len(self.positions) - 1

    @property
    def duration(self) -> float:
        return self.n_intervals * self.dt


@dataclass(frozen=True)
class Kinematics:
    """First/second difference series of a trajectory.

    v_k = (x_{k+1} - x_k) / dt and a_k = (x_{k+2} - 2 x_{k+1} + x_k) / dt^2;
    ``mean_speed`` is (x_N - x_0) / (N dt), which equals the mean of the
    velocity samples by telescoping.
    """

    velocities: np.ndarray
    accelerations: np.ndarray
    mean_speed: float
    speed_std: float


def kinematics(traj: Trajectory) -> Kinematics:
    """Exact discrete differences of the position sequence."""
    x = traj.positions
    v = np.diff(x) / traj.dt
    a = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / (traj.dt * traj.dt)
    mean_speed = (x[-1] - x[0]) / (traj.n_intervals * traj.dt)
    return Kinematics(
        velocities=v,
        accelerations=a,
        mean_speed=float(mean_speed),
        speed_std=float(np.std(v)),
    )


def _rk4_step_batch(fld: SpeedField, t, x, h):
    # Stage samples are clamped onto the inset domain; committed steps
    # that would exit the domain are discarded by the callers, so the
    # clamp only touches the rejected final step.
    k1 = _sample_batch(fld, t, x, clamp=True)
    k2 = _sample_batch(fld, t + 0.5 * h, x + 0.5 * h * k1, clamp=True)
    k3 = _sample_batch(fld, t + 0.5 * h, x + 0.5 * h * k2, clamp=True)
    k4 = _sample_batch(fld, t + h, x + h * k3, clamp=True)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_trajectory(
    fld: SpeedField, t_seed: float, x_seed: float, step: float = DEFAULT_STEP_S
) -> Trajectory:
    """Forward-integrate one vehicle from (t_seed, x_seed).

    Classical fixed-step RK4 on dx/dt = v(t, x); stops when the next
    position would leave the inset extent or the field's time span is
    exhausted, returning the raw fine-step trajectory.

    Raises:
        DomainError: seed outside the inset extent.
        DegenerateTrajectoryError: fewer than 3 steps fit.
    """
    if step <= 0:
        raise RejectedInputError("step must be positive")
    if not fld.contains(t_seed, x_seed):
        raise DomainError(
            f"seed (t={t_seed}, x={x_seed}) outside field extent",
            valid_range=fld.inset_bounds,
        )
    (_, t_hi), (_, x_hi) = fld.inset_bounds
    positions = [float(x_seed)]
    x = np.asarray([x_seed], dtype=float)
    n = 0
    while t_seed + (n + 1) * step <= t_hi + _EPS:
        t = np.asarray([t_seed + n * step], dtype=float)
        x_next = _rk4_step_batch(fld, t, x, step)
        if float(x_next[0]) > x_hi:
            break
        x = x_next
        positions.append(float(x[0]))
        n += 1
    if len(positions) < MIN_INTERVALS + 1:
        raise DegenerateTrajectoryError(
            f"only {len(positions)} samples fit inside the field"
        )
    return Trajectory(
        t_start=float(t_seed), dt=float(step), positions=np.asarray(positions),
        lane=fld.lane,
    )


def integrate_many(
    fld: SpeedField,
    seeds: list,
    step: float = DEFAULT_STEP_S,
    keep_every: int = 1,
) -> list:
    """Integrate many seeds at once with vectorized RK4 steps.

    ``seeds`` is a list of (t_seed, x_seed).  Every vehicle advances one
    step per sweep, so per-vehicle arithmetic is identical to
    :func:`integrate_trajectory`.  Only every ``keep_every``-th sample is
    retained (the seed sample always is), which with ``keep_every =
    round(1 / step)`` yields the 1 Hz resampling directly.  Returns one
    trajectory per seed, or None where fewer than 3 fine steps fit.
    """
    if step <= 0:
        raise RejectedInputError("step must be positive")
    if keep_every < 1:
        raise RejectedInputError("keep_every must be >= 1")
    if not seeds:
        return []
    (_, t_hi), (_, x_hi) = fld.inset_bounds
    t0s = np.asarray([s[0] for s in seeds], dtype=float)
    xs = np.asarray([s[1] for s in seeds], dtype=float)
    for t_seed, x_seed in seeds:
        if not fld.contains(t_seed, x_seed):
            raise DomainError(
                f"seed (t={t_seed}, x={x_seed}) outside field extent",
                valid_range=fld.inset_bounds,
            )
    n_seeds = len(seeds)
    kept: list = [[float(x)] for x in xs]
    fine_counts = np.zeros(n_seeds, dtype=np.int64)
    active = np.ones(n_seeds, dtype=bool)
    n = 0
    while np.any(active):
        can_step = active & (t0s + (n + 1) * step <= t_hi + _EPS)
        active = can_step
        if not np.any(can_step):
            break
        idx = np.nonzero(can_step)[0]
        t = t0s[idx] + n * step
        x_next = _rk4_step_batch(fld, t, xs[idx], step)
        exited = x_next > x_hi
        if np.any(exited):
            active[idx[exited]] = False
        stay = idx[~exited]
        xs[stay] = x_next[~exited]
        fine_counts[stay] += 1
        n += 1
        if (n % keep_every) == 0:
            for i in stay:
                kept[i].append(float(xs[i]))
    out = []
    for i in range(n_seeds):
        if fine_counts[i] < MIN_INTERVALS or len(kept[i]) < MIN_INTERVALS + 1:
            out.append(None)
            continue
        out.append(
            Trajectory(
                t_start=float(t0s[i]),
                dt=float(step * keep_every),
                positions=np.asarray(kept[i]),
                lane=fld.lane,
            )
        )
    return out


def seed_schedule(fld: SpeedField, interval: float) -> list:
    """Seed points at the inset segment start, every ``interval`` seconds.

    Seeds are kept while at least a 3 s trajectory window remains, the
    minimum needed downstream at 1 Hz.  May return an empty list.
    """
    if interval <= 0:
        raise RejectedInputError("seed interval must be positive")
    (t_lo, t_hi), (x_lo, _) = fld.inset_bounds
    min_span = float(MIN_INTERVALS)
    seeds = []
    k = 0
    while t_lo + k * interval + min_span <= t_hi + _EPS:
        seeds.append((t_lo + k * interval, x_lo))
        k += 1
    return seeds


def resample_1hz(traj: Trajectory) -> Trajectory:
    """Linearly resample positions onto a 1.0 s grid.

    The start position is preserved exactly; when the span is a whole
    number of seconds the end position is too, otherwise the trailing
    partial second is truncated.  Already-1 Hz input passes through
    unchanged.

    Raises:
        DegenerateTrajectoryError: span shorter than 3 s.
    """
    if traj.dt > 1.0 + _EPS:
        raise RejectedInputError("resampling expects a sample period <= 1 s")
    span = traj.n_intervals * traj.dt
    n_out = int(np.floor(span + _EPS))
    if n_out < MIN_INTERVALS:
        raise DegenerateTrajectoryError(
            f"trajectory spans {span:.3f} s, need at least {MIN_INTERVALS} s"
        )
    x = traj.positions
    out = np.empty(n_out + 1)
    for k in range(n_out + 1):
        s = k / traj.dt
        i = int(np.floor(s + _EPS))
        frac = s - i
        if frac < _EPS or i >= len(x) - 1:
            out[k] = x[min(i, len(x) - 1)]
        else:
            out[k] = x[i] * (1.0 - frac) + x[i + 1] * frac
    out[0] = x[0]
    if abs(n_out - span) < _EPS:
        out[-1] = x[-1]
    return replace(traj, dt=1.0, positions=out)


def preprocess_reference(traj: Trajectory) -> Trajectory:
    """Enforce non-decreasing positions via the running maximum.

    Identity on already-monotone input.  The largest applied correction
    is recorded on the result; corrections above 0.01 m flag input that
    was meaningfully reversing.
    """
    cleaned = np.maximum.accumulate(traj.positions)
    correction = float(np.max(cleaned - traj.positions))
    return replace(traj, positions=cleaned, max_correction=correction)


# ---------------------------------------------------------------------------
# file format


def save_trajectory(traj: Trajectory, path: str) -> None:
    """Write a trajectory file: ``#key=value`` headers, one position per line."""
    lines = [
        f"#dt={traj.dt!r}",
        f"#t_start={traj.t_start!r}",
        f"#lane={traj.lane}",
        f"#source={traj.source_tag}",
    ]
    if traj.gap_budget is not None:
        lines.append(f"#gap_budget={traj.gap_budget!r}")
    lines.extend(repr(float(p)) for p in traj.positions)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_trajectory(path: str) -> Trajectory:
    """Read a trajectory file written by :func:`save_trajectory`."""
    headers = {}
    positions = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read trajectory file: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" not in line:
                    raise FormatError("malformed header", location=f"line {lineno}")
                key, _, value = line[1:].partition("=")
                headers[key.strip()] = value.strip()
                continue
            try:
                positions.append(float(line))
            except ValueError:
                raise FormatError(
                    f"unparsable position {line!r}", location=f"line {lineno}"
                ) from None
    for key in ("dt", "t_start", "lane", "source"):
        if key not in headers:
            raise FormatError(f"missing header {key!r}", location="header")
    gap = headers.get("gap_budget")
    try:
        return Trajectory(
            t_start=float(headers["t_start"]),
            dt=float(headers["dt"]),
            positions=np.asarray(positions, dtype=float),
            lane=int(headers["lane"]),
            source_tag=headers["source"],
            gap_budget=float(gap) if gap is not None else None,
        )
    except (ValueError, RejectedInputError) as exc:
        if isinstance(exc, DegenerateTrajectoryError):
            raise
        raise FormatError(str(exc), location="header") from None
