"""Independent reference implementations used to cross-check the package.

Everything here is deliberately brute force and shares no code with the
implementations under test: a direct tensor-product bicubic evaluator, an
exhaustive active-set KKT solver for small smoothing QPs, and sort-based
aggregation oracles.
"""

import itertools

import numpy as np

# Catmull-Rom basis matrix (tension 0.5); rows map (p0..p3) to the cubic
# coefficients of u^0..u^3.
_CR_BASIS = 0.5 * np.array(
    [
        [0.0, 2.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [2.0, -5.0, 4.0, -1.0],
        [-1.0, 3.0, -3.0, 1.0],
    ]
)


def bicubic_reference(stencil: np.ndarray, ut: float, ux: float) -> float:
    """Evaluate the Catmull-Rom tensor product on a 4x4 stencil.

    ``stencil[r][c]`` covers grid offsets r, c in {-1, 0, 1, 2} around the
    query cell; ``ut``/``ux`` are the fractional offsets along the first
    (time) and second (space) axes.
    """
    powers_t = np.array([1.0, ut, ut * ut, ut**3])
    powers_x = np.array([1.0, ux, ux * ux, ux**3])
    coeff = _CR_BASIS @ np.asarray(stencil, dtype=float) @ _CR_BASIS.T
    return float(powers_t @ coeff @ powers_x)


def smoothing_qp_data(x_ref: np.ndarray, dt: float, lam: float, gap: float):
    """Dense matrices of the smoothing QP in ineq form G x <= h.

    Returns (P, q, E, e, G, h) for
    min 0.5 x'Px + q'x  s.t.  E x = e,  G x <= h.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    n = len(x_ref)
    n_i = n - 1
    d1 = np.zeros((n_i, n))
    for k in range(n_i):
        d1[k, k] = -1.0 / dt
        d1[k, k + 1] = 1.0 / dt
    d2 = np.zeros((n_i - 1, n))
    for k in range(n_i - 1):
        d2[k, k] = 1.0 / (dt * dt)
        d2[k, k + 1] = -2.0 / (dt * dt)
        d2[k, k + 2] = 1.0 / (dt * dt)
    v_bar = (x_ref[-1] - x_ref[0]) / (n_i * dt)
    v = np.diff(x_ref) / dt
    a = d2 @ x_ref
    P = 2.0 * (d1.T @ d1 + lam * (d2.T @ d2))
    q = -2.0 * v_bar * (d1.T @ np.ones(n_i))
    E = np.vstack(
        [
            np.eye(n)[0],
            np.eye(n)[-1],
            d1[0],
            d1[-1],
            d2[0],
            d2[-1],
        ]
    )
    e = np.array([x_ref[0], x_ref[-1], v[0], v[-1], a[0], a[-1]])
    G = np.vstack([np.eye(n), -np.eye(n), -d1])
    h = np.concatenate([x_ref, -(x_ref - gap), np.zeros(n_i)])
    return P, q, E, e, G, h


def active_set_oracle(x_ref, dt, lam, gap, tol=1e-8):
    """Globally solve a small smoothing QP by enumerating active sets.

    For every subset of inequality constraints up to the dimension slack
    (n - rank(E)), solves the equality-constrained KKT system and accepts
    the first primal-feasible point whose multipliers certify optimality.
    Falls back to the feasible candidate of least objective.
    """
    P, q, E, e, G, h = smoothing_qp_data(x_ref, dt, lam, gap)
    n = len(q)
    rank_e = np.linalg.matrix_rank(E, tol=1e-10)
    max_active = n - rank_e
    m_ineq = len(h)

    def try_subset(subset):
        g_s = G[list(subset)]
        h_s = h[list(subset)]
        a_act = np.vstack([E, g_s]) if len(subset) else E
        b_act = np.concatenate([e, h_s]) if len(subset) else e
        m_act = len(b_act)
        kkt = np.zeros((n + m_act, n + m_act))
        kkt[:n, :n] = P
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        rhs = np.concatenate([-q, b_act])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if np.max(np.abs(kkt @ sol - rhs)) > tol:
            return None
        x = sol[:n]
        mu = sol[n + len(e):]
        if np.any(G @ x > h + tol):
            return None
        if np.max(np.abs(E @ x - e)) > tol:
            return None
        dual_ok = len(subset) == 0 or np.all(mu >= -1e-6)
        return x, dual_ok

    fallback = None
    fallback_obj = np.inf
    for size in range(max_active + 1):
        for subset in itertools.combinations(range(m_ineq), size):
            result = try_subset(subset)
            if result is None:
                continue
            x, dual_ok = result
            if dual_ok:
                return x
            obj = 0.5 * x @ P @ x + q @ x
            if obj < fallback_obj:
                fallback, fallback_obj = x, obj
    if fallback is None:
        raise AssertionError("oracle found no feasible KKT point")
    return fallback


def quantile_oracle(values, level):
    """Linear-interpolation quantile computed from first principles."""
    data = sorted(float(v) for v in values)
    if not data:
        raise ValueError("empty sample")
    pos = level * (len(data) - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return data[lo] * (1.0 - frac) + data[hi] * frac


def groupby_mean_oracle(pairs):
    """Mean per key via explicit accumulation; pairs of (key, value)."""
    sums = {}
    counts = {}
    for key, value in pairs:
        sums[key] = sums.get(key, 0.0) + value
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}
