"""Counterfactual trajectory smoothing as a convex quadratic program.

Given a monotone reference trajectory x_ref, the smoothed benchmark
minimizes  ||D1 x - v_bar||^2 + lam * ||D2 x||^2  subject to

* six boundary equalities pinning both endpoint positions, velocities and
  accelerations to the reference values,
* no overpass: x <= x_ref,
* maximum gap: x >= x_ref - gap,
* no reversing: D1 x >= 0,

where D1 and D2 are the first/second difference operators.  The reference
itself is always feasible (its boundary data are taken from its own
kinematics), so an infeasible solve indicates an internal error.

The solver is operator-splitting ADMM on the scaled problem (positions
shifted by x_ref[0] and divided by the travel distance), with
over-relaxation and a polish step that re-solves the KKT system on the
detected active set.  The difference operators are banded and the bound
rows diagonal, so each iteration costs O(N) after one sparse
factorization; a polished solution is accurate to near machine precision.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DegenerateProblemError, RejectedInputError, SolverFailureError
from .trajectory import Trajectory, kinematics, preprocess_reference

#: Default weight of the acceleration-smoothness term.
DEFAULT_LAMBDA = 10.0

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_INFEASIBLE = "infeasible"

_RHO_EQ_BOOST = 1e3
_ACTIVE_DUAL_TOL = 1e-9
_POLISH_DELTA = 1e-9
_PINF_TOL = 1e-11


@dataclass(frozen=True)
class SolverSettings:
    """Tunable solver parameters; defaults suit 1 Hz trajectories.

    ``tolerance`` bounds both residuals in scaled units and the
    constraint violation in meters (m/s for velocity rows) of any
    solution reported optimal.
    """

    tolerance: float = 1e-6
    max_iterations: int = 50_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    check_interval: int = 25
    polish: bool = True

    def __post_init__(self):
        if self.tolerance <= 0 or self.rho <= 0 or self.sigma <= 0:
            raise RejectedInputError("tolerance, rho and sigma must be positive")
        if not 0.0 < self.alpha < 2.0:
            raise RejectedInputError("over-relaxation alpha must lie in (0, 2)")
        if self.max_iterations < 1 or self.check_interval < 1:
            raise RejectedInputError("iteration counts must be positive")


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class SmoothingProblem:
    """One assembled smoothing QP.

    Boundary data are exactly the first/last entries of the reference
    kinematics, which makes ``x_ref`` feasible by construction.
    """

    x_ref: np.ndarray
    dt: float
    lam: float
    gap: float
    v_bar: float
    v_start: float
    v_end: float
    a_start: float
    a_end: float

    @property
    def n_intervals(self) -> int:
        return len(self.x_ref) - 1


@dataclass
class QpSolution:
    """Solver output.

    ``primal_residual`` is the worst constraint violation and
    ``dual_residual`` the stationarity norm, both in scaled problem
    units; ``objective`` is the unscaled objective at ``x``.
    """

    x: np.ndarray
    status: str
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int


def build_problem(ref: Trajectory, lam: float, gap: float) -> SmoothingProblem:
    """Assemble the QP data for one preprocessed reference trajectory.

    Raises:
        DegenerateProblemError: fewer than 3 intervals.
        RejectedInputError: negative lam/gap or a reversing reference.
    """
    if ref.n_intervals < 3:
        raise DegenerateProblemError("reference must have at least 3 intervals")
    if lam < 0:
        raise RejectedInputError("lam must be non-negative")
    if gap < 0:
        raise RejectedInputError("gap must be non-negative")
    x = ref.positions
    if np.any(np.diff(x) < 0):
        raise RejectedInputError(
            "reference positions decrease; run preprocess_reference first"
        )
    kin = kinematics(ref)
    return SmoothingProblem(
        x_ref=x,
        dt=ref.dt,
        lam=float(lam),
        gap=float(gap),
        v_bar=kin.mean_speed,
        v_start=float(kin.velocities[0]),
        v_end=float(kin.velocities[-1]),
        a_start=float(kin.accelerations[0]),
        a_end=float(kin.accelerations[-1]),
    )


def constraint_counts(problem: SmoothingProblem) -> dict:
    """Row counts of the assembled constraint system."""
    n = problem.n_intervals
    return {
        "equalities": 6,
        "upper_bounds": n + 1,
        "lower_bounds": n + 1,
        "non_reversing": n,
    }


def objective_value(problem: SmoothingProblem, x: np.ndarray) -> float:
    """Exact objective at ``x`` (unscaled units).

    Raises:
        RejectedInputError: length mismatch with the reference.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != problem.x_ref.shape:
        raise RejectedInputError(
            f"candidate has {len(x)} samples, expected {len(problem.x_ref)}"
        )
    v = np.diff(x) / problem.dt
    a = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / (problem.dt * problem.dt)
    dev = v - problem.v_bar
    return float(dev @ dev + problem.lam * (a @ a))


def difference_matrices(n_points: int, dt: float):
    """Sparse first- and second-order difference operators."""
    d1 = sp.diags([-1.0, 1.0], [0, 1], shape=(n_points - 1, n_points)) / dt
    d2 = sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n_points - 2, n_points)) / (
        dt * dt
    )
    return d1.tocsr(), d2.tocsr()


class _ScaledQp:
    """Scaled data plus the pieces shared across a gap sweep."""

    def __init__(self, problem: SmoothingProblem):
        x_ref = problem.x_ref
        self.shift = float(x_ref[0])
        self.scale = max(1.0, float(x_ref[-1] - x_ref[0]))
        self.n = len(x_ref)
        n_i = problem.n_intervals
        self.xr = (x_ref - self.shift) / self.scale
        d1, d2 = difference_matrices(self.n, problem.dt)
        self.P = (2.0 * (d1.T @ d1 + problem.lam * (d2.T @ d2))).tocsc()
        vb = problem.v_bar / self.scale
        self.q = np.asarray(-2.0 * vb * (d1.T @ np.ones(n_i))).ravel()
        eq_rows = sp.vstack(
            [
                sp.csr_matrix(([1.0], ([0], [0])), shape=(1, self.n)),
                sp.csr_matrix(([1.0], ([0], [self.n - 1])), shape=(1, self.n)),
                d1[0],
                d1[n_i - 1],
                d2[0],
                d2[n_i - 2],
            ]
        )
        self.A = sp.vstack([eq_rows, sp.eye(self.n, format="csr"), d1]).tocsc()
        self.A_csr = self.A.tocsr()
        self.eq_rhs = np.array(
            [
                self.xr[0],
                self.xr[-1],
                problem.v_start / self.scale,
                problem.v_end / self.scale,
                problem.a_start / self.scale,
                problem.a_end / self.scale,
            ]
        )
        self.m = self.A.shape[0]
        self._factor = None
        self._factor_key = None

    def bounds(self, gap: float):
        gap_s = gap / self.scale
        l = np.concatenate([self.eq_rhs, self.xr - gap_s, np.zeros(self.n - 1)])
        u = np.concatenate(
            [self.eq_rhs, self.xr, np.full(self.n - 1, np.inf)]
        )
        return l, u

    def rho_vector(self, l, u, rho0: float):
        rho = np.full(self.m, rho0)
        rho[(u - l) <= 1e-12] = rho0 * _RHO_EQ_BOOST
        return rho

    def factorize(self, rho, sigma: float):
        key = (rho.tobytes(), sigma)
        if self._factor_key != key:
            kkt = sp.bmat(
                [
                    [self.P + sigma * sp.eye(self.n), self.A.T],
                    [self.A, -sp.diags(1.0 / rho)],
                ],
                format="csc",
            )
            self._factor = splu(kkt)
            self._factor_key = key
        return self._factor

    def violation(self, x, l, u):
        ax = self.A_csr @ x
        return float(np.max(np.maximum(np.maximum(ax - u, l - ax), 0.0)))

    def dual_residual(self, x, y):
        return float(
            np.max(np.abs(self.P @ x + self.q + self.A_csr.T @ y))
        )


def _polish(qp: _ScaledQp, l, u, y, z, tol):
    """Refine the ADMM iterate by solving the active-set KKT system.

    Starts from the active set suggested by the dual signs and primal
    slacks, then repairs it: constraints the candidate point violates are
    added, active constraints whose multiplier has the wrong sign are
    dropped, and the KKT system is re-solved.  Returns
    (x, y, r_prim, r_dual) or None when no refinement meets ``tol``.
    """
    eq = (u - l) <= 1e-12
    low = ((y < -_ACTIVE_DUAL_TOL) | (z - l <= 1e-7)) & ~eq
    up = ((y > _ACTIVE_DUAL_TOL) | (u - z <= 1e-7)) & ~eq
    for _ in range(15):
        result = _polish_once(qp, l, u, eq, low, up)
        if result is None:
            return None
        x_pol, y_pol, r_prim, r_dual = result
        ax = qp.A_csr @ x_pol
        add_up = (ax - u > tol) & ~up & ~eq
        add_low = (l - ax > tol) & ~low & ~eq
        # a multiplier with the wrong sign marks a constraint that does
        # not actually bind at the optimum
        drop_low = low & (y_pol > _ACTIVE_DUAL_TOL)
        drop_up = up & (y_pol < -_ACTIVE_DUAL_TOL)
        clean = not (
            np.any(add_up) or np.any(add_low) or np.any(drop_low) or np.any(drop_up)
        )
        if clean:
            if r_prim <= tol and r_dual <= tol:
                return result
            return None
        up = (up | add_up) & ~drop_up
        low = (low | add_low) & ~drop_low
        # a row cannot bind on both sides unless it is an equality
        both = low & up
        low &= ~both
        up &= ~both
    return None


def _polish_once(qp: _ScaledQp, l, u, eq, low, up):
    rows = np.nonzero(eq | low | up)[0]
    if len(rows) == 0:
        return None
    b = np.where(low, l, u)[rows]
    a_act = qp.A_csr[rows]
    n = qp.n
    m_act = len(rows)
    kkt_reg = sp.bmat(
        [
            [qp.P + _POLISH_DELTA * sp.eye(n), a_act.T],
            [a_act, -_POLISH_DELTA * sp.eye(m_act)],
        ],
        format="csc",
    )
    try:
        lu = splu(kkt_reg)
    except RuntimeError:
        return None
    rhs = np.concatenate([-qp.q, b])
    sol = lu.solve(rhs)
    # refine against the unregularized system
    for _ in range(3):
        res_top = -qp.q - (qp.P @ sol[:n] + a_act.T @ sol[n:])
        res_bot = b - a_act @ sol[:n]
        sol = sol + lu.solve(np.concatenate([res_top, res_bot]))
    x_pol = sol[:n]
    y_pol = np.zeros(qp.m)
    y_pol[rows] = sol[n:]
    return x_pol, y_pol, qp.violation(x_pol, l, u), qp.dual_residual(x_pol, y_pol)


def _solve_scaled(qp: _ScaledQp, l, u, settings: SolverSettings, x0, y0=None):
    """Run ADMM + polish on the scaled problem; returns a raw result dict.

    The penalty parameter adapts to the primal/dual residual balance
    (with refactorization) when the two drift far apart, which keeps
    badly scaled instances from stalling.  All decisions depend only on
    the iterates, so the solve stays deterministic.
    """
    rho_base = settings.rho
    rho = qp.rho_vector(l, u, rho_base)
    lu = qp.factorize(rho, settings.sigma)
    n = qp.n
    x = np.array(x0, dtype=float)
    z = np.clip(qp.A_csr @ x, l, u)
    y = np.zeros(qp.m) if y0 is None else np.array(y0, dtype=float)
    alpha = settings.alpha
    inv_rho = 1.0 / rho
    # a solution reported optimal must violate no constraint by more than
    # the tolerance in unscaled meters either
    prim_target = settings.tolerance * min(1.0, 1.0 / qp.scale)
    polish_trigger = max(settings.tolerance, 1e-4)
    polish_retry_trigger = 1e-2
    last_polish_at = -10**9
    y_prev_check = y.copy()
    best = None
    iterations = 0
    while iterations < settings.max_iterations:
        for _ in range(min(settings.check_interval, settings.max_iterations - iterations)):
            rhs = np.concatenate([settings.sigma * x - qp.q, z - inv_rho * y])
            sol = lu.solve(rhs)
            x_tilde = sol[:n]
            nu = sol[n:]
            z_tilde = z + inv_rho * (nu - y)
            x = alpha * x_tilde + (1.0 - alpha) * x
            zr = alpha * z_tilde + (1.0 - alpha) * z
            z = np.clip(zr + inv_rho * y, l, u)
            y = y + rho * (zr - z)
            iterations += 1
        ax = qp.A_csr @ x
        r_prim = qp.violation(x, l, u)
        r_dual = qp.dual_residual(x, y)
        if best is None or max(r_prim, r_dual) < max(best[2], best[3]):
            best = (x.copy(), y.copy(), r_prim, r_dual)
        want_polish = r_prim <= polish_trigger and r_dual <= polish_trigger
        retry_polish = (
            max(r_prim, r_dual) <= polish_retry_trigger
            and iterations - last_polish_at >= 200
        )
        if want_polish or retry_polish:
            if settings.polish:
                last_polish_at = iterations
                polished = _polish(qp, l, u, y, z, settings.tolerance)
                if polished is not None and polished[2] <= prim_target:
                    x_p, y_p, rp, rd = polished
                    return {
                        "x": x_p,
                        "y": y_p,
                        "status": STATUS_OPTIMAL,
                        "r_prim": rp,
                        "r_dual": rd,
                        "iterations": iterations,
                    }
            if r_prim <= prim_target and r_dual <= settings.tolerance:
                return {
                    "x": x,
                    "y": y,
                    "status": STATUS_OPTIMAL,
                    "r_prim": r_prim,
                    "r_dual": r_dual,
                    "iterations": iterations,
                }
        dy = y - y_prev_check
        y_prev_check = y.copy()
        norm_dy = float(np.max(np.abs(dy)))
        if norm_dy > 0 and iterations > settings.check_interval:
            # primal infeasibility certificate (unreachable for a
            # preprocessed reference; surfaced loudly, never skipped)
            at_dy = float(np.max(np.abs(qp.A_csr.T @ dy)))
            finite_u = np.isfinite(u)
            support = float(
                u[finite_u] @ np.maximum(dy[finite_u], 0.0)
                + l @ np.minimum(dy, 0.0)
            )
            inf_dir_ok = not np.any(dy[~finite_u] > _PINF_TOL * norm_dy)
            if (
                inf_dir_ok
                and at_dy <= _PINF_TOL * norm_dy
                and support < -_PINF_TOL * norm_dy
            ):
                return {
                    "x": x,
                    "y": y,
                    "status": STATUS_INFEASIBLE,
                    "r_prim": r_prim,
                    "r_dual": r_dual,
                    "iterations": iterations,
                }
        # rebalance rho when the normalized residuals diverge
        prim_scale = max(
            float(np.max(np.abs(ax))), float(np.max(np.abs(z))), 1e-12
        )
        dual_scale = max(
            float(np.max(np.abs(qp.P @ x))),
            float(np.max(np.abs(qp.A_csr.T @ y))),
            float(np.max(np.abs(qp.q))),
            1e-12,
        )
        ratio = np.sqrt((r_prim / prim_scale) / max(r_dual / dual_scale, 1e-16))
        if ratio > 5.0 or ratio < 0.2:
            rho_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
            rho = qp.rho_vector(l, u, rho_base)
            inv_rho = 1.0 / rho
            lu = qp.factorize(rho, settings.sigma)
            y_prev_check = y.copy()
    x, y, r_prim, r_dual = best
    return {
        "x": x,
        "y": y,
        "status": STATUS_MAX_ITERATIONS,
        "r_prim": r_prim,
        "r_dual": r_dual,
        "iterations": iterations,
    }


def _finish(problem: SmoothingProblem, qp: _ScaledQp, raw: dict) -> QpSolution:
    x = qp.shift + qp.scale * raw["x"]
    return QpSolution(
        x=x,
        status=raw["status"],
        objective=objective_value(problem, x),
        primal_residual=raw["r_prim"],
        dual_residual=raw["r_dual"],
        iterations=raw["iterations"],
    )


def solve(
    problem: SmoothingProblem,
    warm_start: np.ndarray | None = None,
    settings: SolverSettings | None = None,
) -> QpSolution:
    """Solve one smoothing QP to global optimality.

    ``warm_start`` is an optional position sequence (meters) to start
    from; by default the solver starts at the (always feasible)
    reference.  Deterministic for identical inputs and settings.
    """
    settings = settings or DEFAULT_SETTINGS
    qp = _ScaledQp(problem)
    l, u = qp.bounds(problem.gap)
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=float)
        if warm_start.shape != problem.x_ref.shape:
            raise RejectedInputError("warm start length mismatch")
        x0 = (warm_start - qp.shift) / qp.scale
    else:
        x0 = qp.xr
    raw = _solve_scaled(qp, l, u, settings, x0)
    return _finish(problem, qp, raw)


def solve_sweep(
    ref: Trajectory,
    lam: float,
    gaps,
    settings: SolverSettings | None = None,
) -> list:
    """Solve the same reference across a gap sweep, warm-starting each
    budget from the previous optimum (feasible for any larger gap) and
    reusing the shared matrix factorization.

    Returns one :class:`QpSolution` per entry of ``gaps`` in order.
    """
    settings = settings or DEFAULT_SETTINGS
    gaps = list(gaps)
    if not gaps:
        return []
    base = build_problem(ref, lam, gaps[0])
    qp = _ScaledQp(base)
    solutions = []
    x0 = qp.xr
    y0 = None
    for gap in gaps:
        if gap < 0:
            raise RejectedInputError("gap must be non-negative")
        problem = replace(base, gap=float(gap))
        l, u = qp.bounds(gap)
        raw = _solve_scaled(qp, l, u, settings, x0, y0)
        solutions.append(_finish(problem, qp, raw))
        if raw["status"] == STATUS_OPTIMAL:
            x0 = raw["x"]
            y0 = raw["y"]
    return solutions


def smooth(
    ref: Trajectory,
    lam: float = DEFAULT_LAMBDA,
    gap: float = 0.0,
    settings: SolverSettings | None = None,
) -> Trajectory:
    """Preprocess, assemble and solve; return the benchmark trajectory.

    Raises:
        SolverFailureError: the solver did not reach optimal status.
    """
    clean = preprocess_reference(ref)
    problem = build_problem(clean, lam, gap)
    solution = solve(problem, settings=settings)
    if solution.status != STATUS_OPTIMAL:
        raise SolverFailureError(
            f"solver returned status {solution.status!r}", solution=solution
        )
    return replace(
        clean,
        positions=solution.x,
        source_tag="benchmark",
        gap_budget=float(gap),
    )
