"""Monitored quantities: maximum principles, one-sided Lipschitz (Oleinik)
monitor and its Riccati comparison, total variation, convergence tables.

Everything here is pure post-processing over states and recomputes what it
needs (``xi``, slopes) from the dumped fields, independently of the
solvers' in-loop monitors.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .convolution import compute_xi
from .errors import DegenerateRoots, GridMismatch, InsufficientData, WindowOutOfGrid

OLEINIK_T_MIN = 0.05


@dataclass
class DiagnosticsReport:
    scenario: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    monitor: dict = field(default_factory=dict)

    def series(self, key):
        return np.array([r[key] for r in self.records])

    def as_dict(self):
        return {
            "scenario": self.scenario,
            "records": self.records,
            "fits": self.fits,
            "tables": self.tables,
            "monitor": {k: list(map(float, v)) for k, v in self.monitor.items()},
        }


def xi_of(state, kernel, grid):
    """``xi`` and forward slopes for a state; ``kernel=None`` means the local model (``xi = rho``)."""
    if kernel is None:
        xi = np.asarray(state.rho, dtype=float)
        h = np.empty_like(xi)
        h[:-1] = np.diff(xi) / grid.dx
        h[-1] = -xi[-1] / grid.dx
        return xi, h
    f = compute_xi(state.rho, kernel, grid)
    return f.xi, f.h


def min_slope(xi, dx):
    """``min_i (xi[i+1] - xi[i]) / dx`` over interior interfaces."""
    xi = np.asarray(xi, dtype=float)
    return float(np.min(np.diff(xi)) / dx)


def consistency_residual(state, grid):
    """``max |(u[i+1] - u[i]) / dx - rho[i] z[i]|`` over interior cells."""
    du = np.diff(state.u) / grid.dx
    return float(np.max(np.abs(du - state.rho[:-1] * state.z[:-1])))


def record_state(state, kernel, grid, window=None):
    xi, h = xi_of(state, kernel, grid)
    lo, hi = _window_bounds(grid, window)
    return {
        "t": float(state.t),
        "mass": float(np.sum(state.rho) * grid.dx),
        "rho_min": float(state.rho.min()), "rho_max": float(state.rho.max()),
        "u_min": float(state.u.min()), "u_max": float(state.u.max()),
        "z_min": float(state.z.min()), "z_max": float(state.z.max()),
        "psi_min": float(state.psi.min()), "psi_max": float(state.psi.max()),
        "xi_min": float(xi.min()), "xi_max": float(xi.max()),
        "m": min_slope(xi, grid.dx),
        "tv_xi": tv_on_window(xi, grid, (lo, hi)),
        "consistency": consistency_residual(state, grid),
    }


# ---------------------------------------------------------------------------
# Oleinik monitor
# ---------------------------------------------------------------------------


def oleinik_monitor(states, kernel, grid):
    """Return ``(t, m)`` with ``m(t) = min_x d_x xi`` at each state."""
    t = np.array([s.t for s in states], dtype=float)
    m = np.array([min_slope(xi_of(s, kernel, grid)[0], grid.dx) for s in states])
    return t, m


def _certify_default():
    return os.environ.get("NLGARZ_CERTIFY", "") not in ("", "0")


def solve_oleinik_constants(c0, c1, c2, certify=None):
    """Constants ``(a, c)`` with ``m >= -a - 1/(c t)`` for ``m' >= c2 m^2 + c1 m - c0``.

    ``a`` is twice the modulus of the negative root of ``c2 x^2 + c1 x - c0``.
    ``c`` is the largest value with ``(c2 - c) x^2 + c1 x - c0 >= 0`` on
    ``x <= -a``. Writing ``y = 1/x`` the admissible ``c`` is bounded by the
    concave ``c2 + c1 y - c0 y^2`` on ``[-1/a, 0)``, whose minimum sits at an
    endpoint, so ``c = c2 - c1/a - c0/a^2``.
    """
    if not (c0 > 0 and c2 > 0 and c1 >= 0):
        raise ValueError("need c0 > 0, c2 > 0, c1 >= 0")
    disc = c1 * c1 + 4.0 * c2 * c0
    if disc <= 0:
        raise DegenerateRoots(f"discriminant {disc} <= 0")
    sq = math.sqrt(disc)
    m2 = (c1 + sq) / (2.0 * c2)
    a = 2.0 * m2
    c = min(c2, c2 - c1 / a - c0 / (a * a))
    if certify is None:
        certify = _certify_default()
    if certify:
        ok, margin = certify_oleinik_constants(c0, c1, c2, a, c)
        assert ok, f"comparison certificate failed for {(c0, c1, c2)}: margin {margin}"
    return a, c


def certify_oleinik_constants(c0, c1, c2, a, c, m_start=-1e3, t_start=1e-4, t_end=10.0, samples=1000):
    """ODE comparison oracle: integrate ``m' = c2 m^2 + c1 m - c0`` from
    ``m(t_start) = m_start`` and check ``m >= -a - 1/(c t)`` at ``samples`` times.

    Returns ``(ok, min margin)``.
    """
    def rhs(t, m):
        return c2 * m * m + c1 * m - c0

    t_eval = np.geomspace(t_start, t_end, samples)
    sol = solve_ivp(rhs, (t_start, t_end), [m_start], t_eval=t_eval, method="Radau",
                    rtol=1e-10, atol=1e-12)
    if not sol.success:
        return False, -np.inf
    bound = -a - 1.0 / (c * sol.t)
    margin = float(np.min(sol.y[0] - bound))
    return margin >= -1e-9 * (1.0 + abs(m_start)), margin


@dataclass
class OleinikFit:
    a: float
    c: float
    satisfied: bool
    n_points: int
    improved: tuple = None  # (a, c) of the variant anchored at the initial slope m0

    def bound(self, t):
        t = np.asarray(t, dtype=float)
        inv = 0.0 if math.isinf(self.c) else 1.0 / (self.c * t)
        return -self.a - inv

    def as_dict(self):
        return {"a": self.a, "c": self.c, "satisfied": self.satisfied,
                "n_points": self.n_points, "improved": self.improved}


def _envelope_lsq(model, m, t, x0):
    """Least squares of ``model(p, t)`` to ``m`` subject to ``m >= model`` and ``p >= 0``."""
    cons = {"type": "ineq", "fun": lambda p: m - model(p, t)}
    res = minimize(lambda p: np.sum((m - model(p, t)) ** 2), x0, method="SLSQP",
                   bounds=[(0.0, None), (0.0, None)], constraints=[cons],
                   options={"ftol": 1e-14, "maxiter": 500})
    p = np.maximum(res.x, 0.0)
    # push a up by any residual violation left by the optimizer
    p[0] += max(0.0, float(np.max(model(p, t) - m)))
    return p


def fit_oleinik_bound(m_series, t_grid, m0=None, t_min=OLEINIK_T_MIN):
    """Fit ``m(t) >= -a - 1/(c t)`` to the negative part of ``m`` on ``t >= t_min``.

    The fit is least squares constrained to stay below the data, so the
    fitted curve is a lower envelope. With ``m0 < 0`` (one-sided Lipschitz
    constant of the data) also fits ``-a + 1/(1/m0 - c t)``.
    """
    m = np.asarray(m_series, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    sel = t >= t_min
    if sel.sum() < 5:
        raise InsufficientData(f"need >= 5 checkpoints with t >= {t_min}, got {int(sel.sum())}")
    m, t = np.minimum(m[sel], 0.0), t[sel]
    if np.all(m == 0):
        return OleinikFit(0.0, math.inf, True, int(t.size), (0.0, math.inf) if m0 is not None else None)

    def model(p, tt):
        return -p[0] - p[1] / tt

    # unconstrained start, then constrained refinement
    A = np.column_stack([-np.ones_like(t), -1.0 / t])
    start = np.maximum(np.linalg.lstsq(A, m, rcond=None)[0], 0.0)
    a, b = _envelope_lsq(model, m, t, start)
    c = math.inf if b == 0 else 1.0 / b
    fit = OleinikFit(float(a), float(c), True, int(t.size))
    fit.satisfied = bool(np.all(m >= fit.bound(t) - 1e-6))

    if m0 is not None and m0 < 0:
        def model2(p, tt):
            return -p[0] - 1.0 / (p[1] * tt - 1.0 / m0)

        p2 = _envelope_lsq(model2, m, t, np.array([a, min(c, 1e6) if c != math.inf else 1.0]))
        fit.improved = (float(p2[0]), float(p2[1]))
    return fit


# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------


def _window_bounds(grid, window):
    if window is None:
        return grid.x_lo, grid.x_hi
    if np.isscalar(window):
        return -float(window), float(window)
    lo, hi = window
    return float(lo), float(hi)


def tv_on_window(xi, grid, window):
    """``sum |xi[i+1] - xi[i]|`` over consecutive faces inside ``window``.

    ``window`` is ``L`` (meaning ``[-L, L]``) or a pair ``(lo, hi)``.
    """
    lo, hi = _window_bounds(grid, window)
    tol = 1e-12 * max(1.0, abs(grid.x_lo), abs(grid.x_hi))
    if lo < grid.x_lo - tol or hi > grid.x_hi + tol or lo > hi:
        raise WindowOutOfGrid(f"window [{lo}, {hi}] not inside [{grid.x_lo}, {grid.x_hi}]")
    faces = grid.all_faces
    vals = np.concatenate([np.asarray(xi, dtype=float), [0.0]])
    inside = (faces >= lo - tol) & (faces <= hi + tol)
    v = vals[inside]
    return float(np.sum(np.abs(np.diff(v)))) if v.size > 1 else 0.0


def tv_bound(L, a, c, t):
    """Right-hand side ``4 L (a + 1/(c t)) + 1`` of the window TV bound."""
    inv = 0.0 if math.isinf(c) else 1.0 / (c * t)
    return 4.0 * L * (a + inv) + 1.0


# ---------------------------------------------------------------------------
# convergence tables
# ---------------------------------------------------------------------------


def _block_mean(values, r):
    return np.asarray(values, dtype=float).reshape(-1, r).mean(axis=1)


def _to_common(fine_grid, coarse_grid):
    if (fine_grid.x_lo, fine_grid.x_hi) != (coarse_grid.x_lo, coarse_grid.x_hi):
        raise GridMismatch("grids cover different domains")
    if fine_grid.n % coarse_grid.n:
        raise GridMismatch(f"cell ratio {fine_grid.n}/{coarse_grid.n} is not an integer")
    return fine_grid.n // coarse_grid.n


def state_at(run, t):
    for s in run.states:
        if abs(s.t - t) <= 1e-9 * max(1.0, abs(t)):
            return s
    raise ValueError(f"run has no checkpoint at t = {t}")


def _cell_fields(run, t):
    """Cell-center xi (midpoint of its faces) and face u at time ``t``."""
    s = state_at(run, t)
    xi, _ = xi_of(s, run.kernel, run.grid)
    xi_c = 0.5 * (xi + np.concatenate([xi[1:], [0.0]])) if run.kernel is not None else xi
    return xi_c, np.asarray(s.u, dtype=float), np.asarray(s.rho, dtype=float)


def compare_fields(run_a, run_b, t, window=None):
    """L1 distance of cell ``xi`` (``rho`` for local runs) and sup distance of ``u`` on a common grid."""
    xa, ua, _ = _cell_fields(run_a, t)
    xb, ub, _ = _cell_fields(run_b, t)
    ga, gb = run_a.grid, run_b.grid
    if ga.n >= gb.n:
        r = _to_common(ga, gb)
        xa, ua, grid = _block_mean(xa, r), ua[::r], gb
    else:
        r = _to_common(gb, ga)
        xb, ub, grid = _block_mean(xb, r), ub[::r], ga
    lo, hi = _window_bounds(grid, window)
    cells = (grid.centers >= lo) & (grid.centers <= hi)
    faces = (grid.faces >= lo) & (grid.faces <= hi)
    l1 = float(np.sum(np.abs(xa - xb)[cells]) * grid.dx)
    sup = float(np.max(np.abs(ua - ub)[faces])) if faces.any() else 0.0
    return l1, sup


def rho_l1(run_a, run_b, t, window=None):
    """L1 distance between the densities of two runs at time ``t``."""
    ra = state_at(run_a, t).rho
    rb = state_at(run_b, t).rho
    ga, gb = run_a.grid, run_b.grid
    if ga.n >= gb.n:
        ra, grid = _block_mean(ra, _to_common(ga, gb)), gb
    else:
        rb, grid = _block_mean(rb, _to_common(gb, ga)), ga
    lo, hi = _window_bounds(grid, window)
    cells = (grid.centers >= lo) & (grid.centers <= hi)
    return float(np.sum(np.abs(ra - rb)[cells]) * grid.dx)


def observed_orders(errors):
    out = []
    for e0, e1 in zip(errors[:-1], errors[1:]):
        out.append(math.log2(e0 / e1) if e0 > 0 and e1 > 0 else float("nan"))
    return out


def convergence_table(runs, reference, t_eval, window=None):
    """Rows ``{epsilon, l1_xi, sup_u, max_rho}`` of each nonlocal run against a local reference.

    ``runs`` is ordered by decreasing epsilon; ``max_rho`` is the maximum
    density over every time step of the run.
    """
    rows = []
    for run in runs:
        l1, sup = compare_fields(run, reference, t_eval, window)
        rows.append({"epsilon": float(run.kernel.epsilon), "l1_xi": l1, "sup_u": sup,
                     "max_rho": float(run.max_rho)})
    return {
        "rows": rows,
        "order_l1_xi": observed_orders([r["l1_xi"] for r in rows]),
        "order_sup_u": observed_orders([r["sup_u"] for r in rows]),
    }


def fit_overshoot_constant(epsilons, max_rhos):
    """Smallest ``K >= 0`` with ``max_rho_eps <= 1 + K eps`` for every row."""
    eps = np.asarray(epsilons, dtype=float)
    mr = np.asarray(max_rhos, dtype=float)
    return float(max(0.0, np.max((mr - 1.0) / eps)))


def slope_constant(states, kernel, grid, t_min=OLEINIK_T_MIN):
    """Smallest ``K >= 0`` with ``min slope(t) >= -K / t`` at every state with ``t >= t_min``."""
    t, m = oleinik_monitor(states, kernel, grid)
    keep = t >= t_min
    if not keep.any():
        raise InsufficientData(f"no checkpoint at t >= {t_min}")
    return float(max(0.0, np.max(-t[keep] * m[keep])))
