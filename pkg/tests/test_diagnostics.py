import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlgarz.config import load_shipped
from nlgarz.diagnostics import (certify_oleinik_constants, compare_fields, consistency_residual,
                                convergence_table, fit_oleinik_bound, fit_overshoot_constant, min_slope,
                                observed_orders, oleinik_monitor, record_state, slope_constant,
                                solve_oleinik_constants, tv_bound, tv_on_window)
from nlgarz.errors import DegenerateRoots, GridMismatch, InsufficientData, WindowOutOfGrid
from nlgarz.grid import Grid
from nlgarz.model import exponential_kernel
from nlgarz.solver_nonlocal import GridState, run


def state(rho, t=0.0, u=None, z=None, psi=None):
    n = len(rho)
    f = lambda v, d: np.full(n, d) if v is None else np.asarray(v, dtype=float)
    return GridState(t, np.asarray(rho, dtype=float), f(u, 1.0), f(z, 0.0), f(psi, 0.0))


# -- per-state records -------------------------------------------------------------


def test_record_state_examples():
    g = Grid(0, 1, 4)
    s = state([0.0, 0.5, 1.0, 0.0], t=0.3, u=[1.0, 1.0, 1.125, 1.375], z=[0.0, 0.0, 0.25, 0.25])
    r = record_state(s, None, g)
    assert r["t"] == 0.3 and r["mass"] == pytest.approx(0.375)
    assert (r["rho_min"], r["rho_max"]) == (0.0, 1.0)
    assert (r["u_min"], r["u_max"], r["z_min"], r["z_max"]) == (1.0, 1.375, 0.0, 0.25)
    # local model: xi = rho, slopes 2, 2, -4
    assert r["m"] == pytest.approx(-4.0)
    assert r["tv_xi"] == pytest.approx(2.0)
    # u slopes 0, 0.5, 1.0 against rho z = 0, 0, 0.25
    assert r["consistency"] == pytest.approx(0.75)


def test_min_slope_and_consistency():
    assert min_slope([0.0, 1.0, 0.5], 0.5) == -1.0
    g = Grid(0, 1, 3)
    s = state([0.2, 0.2, 0.0], u=[1.0, 1.0 + 0.2 * 0.5 / 3, 1.0 + 0.2 * 1.0 / 3], z=[0.5, 0.5, 0.5])
    assert consistency_residual(s, g) <= 1e-14


# -- Riccati constants ------------------------------------------------------------------


def test_oleinik_constants_unit_case():
    a, c = solve_oleinik_constants(1.0, 0.0, 1.0, certify=False)
    assert (a, c) == (pytest.approx(2.0), pytest.approx(0.75))


def test_oleinik_constants_against_exact_riccati_solution():
    # m' = m^2 - 1 from m(1e-4) = -1000 has the solution m = -coth(t + t0)
    a, c = solve_oleinik_constants(1.0, 0.0, 1.0, certify=False)
    t0 = math.atanh(1 / 1000) - 1e-4
    t = np.geomspace(1e-4, 10, 2000)
    m = -1 / np.tanh(t + t0)
    assert m[0] == pytest.approx(-1000, rel=1e-9)
    assert np.all(m >= -a - 1 / (c * t) - 1e-12)
    ok, margin = certify_oleinik_constants(1.0, 0.0, 1.0, a, c)
    assert ok and margin >= 0


@pytest.mark.parametrize("c0,c2", [(4.0, 1.0), (1.0, 9.0), (0.3, 0.7)])
def test_oleinik_constants_scaling(c0, c2):
    a, c = solve_oleinik_constants(c0, 0.0, c2, certify=False)
    assert a == pytest.approx(2 * math.sqrt(c0 / c2))
    assert c == pytest.approx(0.75 * c2)


def test_oleinik_constants_invalid():
    with pytest.raises(ValueError):
        solve_oleinik_constants(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        solve_oleinik_constants(1.0, -1.0, 1.0)


@given(st.floats(0.01, 10), st.floats(0, 10), st.floats(0.01, 10))
@settings(max_examples=25, deadline=None)
def test_oleinik_constants_certified(c0, c1, c2):
    a, c = solve_oleinik_constants(c0, c1, c2, certify=False)
    assert a > 0 and 0 < c <= c2
    ok, margin = certify_oleinik_constants(c0, c1, c2, a, c)
    assert ok, margin


def test_degenerate_roots_error_is_exported():
    assert issubclass(DegenerateRoots, Exception)


# -- fits ---------------------------------------------------------------------------


def test_fit_zero_series():
    t = np.linspace(0.1, 1, 10)
    fit = fit_oleinik_bound(np.zeros(10), t, m0=-1.0)
    assert fit.a == 0 and fit.c == math.inf and fit.satisfied
    assert fit.improved == (0.0, math.inf)


def test_fit_recovers_synthetic_curve():
    t = np.linspace(0.05, 1, 20)
    m = -0.5 - 1 / (2.0 * t)
    fit = fit_oleinik_bound(m, t)
    assert fit.a == pytest.approx(0.5, abs=1e-5) and fit.c == pytest.approx(2.0, rel=1e-4)
    assert fit.satisfied and fit.n_points == 20


def test_fit_is_lower_envelope():
    rng = np.random.default_rng(2)
    t = np.linspace(0.05, 1, 30)
    m = -0.3 - 1 / (4.0 * t) + rng.uniform(-0.05, 0.05, 30)
    fit = fit_oleinik_bound(m, t)
    assert np.all(m >= fit.bound(t) - 1e-9)


def test_fit_improved_variant():
    t = np.linspace(0.05, 1, 20)
    m0 = -2.0
    m = -0.5 + 1 / (1 / m0 - 3.0 * t)
    fit = fit_oleinik_bound(m, t, m0=m0)
    a2, c2 = fit.improved
    assert a2 == pytest.approx(0.5, abs=1e-4) and c2 == pytest.approx(3.0, rel=1e-3)


def test_fit_needs_five_points():
    with pytest.raises(InsufficientData):
        fit_oleinik_bound(-np.ones(4), np.linspace(0.1, 1, 4))
    with pytest.raises(InsufficientData):
        fit_oleinik_bound(-np.ones(10), np.linspace(0.0, 0.04, 10))


# -- total variation ---------------------------------------------------------------------


def test_tv_monotone_profile():
    g = Grid(0, 1, 10)
    xi = np.linspace(1, 0.1, 10)
    assert tv_on_window(xi, g, None) == pytest.approx(1.0)   # closure xi = 0 at the right end


def test_tv_sawtooth():
    g = Grid(-2, 3, 5)
    assert tv_on_window([0.0, 0.3, 0.0, 0.3, 0.0], g, None) == pytest.approx(1.2)
    assert tv_on_window([0.0, 0.3, 0.0, 0.3, 0.0], g, 1.0) == pytest.approx(0.6)


def test_tv_window_outside_grid():
    with pytest.raises(WindowOutOfGrid):
        tv_on_window(np.zeros(10), Grid(0, 1, 10), 0.5)
    with pytest.raises(WindowOutOfGrid):
        tv_on_window(np.zeros(10), Grid(-1, 1, 10), (0.5, 0.2))


@given(st.lists(st.floats(0, 1), min_size=40, max_size=40), st.integers(5, 30))
def test_tv_additive_over_split_windows(xi, k):
    g = Grid(0, 40, 40)
    b = float(k)
    whole = tv_on_window(xi, g, (2.0, 35.0))
    assert whole == pytest.approx(tv_on_window(xi, g, (2.0, b)) + tv_on_window(xi, g, (b, 35.0)), abs=1e-12)
    assert whole <= tv_on_window(xi, g, None) + 1e-12


@given(st.lists(st.floats(0, 1), min_size=10, max_size=10), st.integers(0, 20))
def test_tv_shift_invariant(core, shift):
    g = Grid(0, 50, 50)
    a = np.zeros(50)
    a[10:20] = core
    b = np.roll(a, shift)
    assert tv_on_window(a, g, (5.0, 25.0)) == pytest.approx(tv_on_window(b, g, (5.0 + shift, 25.0 + shift)))


def test_tv_bound_formula():
    assert tv_bound(2.0, 0.5, 4.0, 0.25) == pytest.approx(4 * 2 * (0.5 + 1.0) + 1)
    assert tv_bound(2.0, 0.0, math.inf, 0.25) == 1.0


# -- convergence tables and constants ----------------------------------------------------------


@pytest.fixture(scope="module")
def small_runs():
    out = {}
    for n in (200, 400):
        out[n] = run(load_shipped("constant_u_bump", [f"domain.n_cells={n}"]))
    return out


def test_self_comparison_is_zero(small_runs):
    r = small_runs[200]
    table = convergence_table([r], r, 0.3)
    row = table["rows"][0]
    assert row["l1_xi"] == 0.0 and row["sup_u"] == 0.0 and row["epsilon"] == 0.1


def test_grid_mismatch():
    a = run(load_shipped("constant_u_bump", ["domain.n_cells=300", "time.checkpoints=0.1", "time.t_end=0.1"]))
    b = run(load_shipped("constant_u_bump", ["domain.n_cells=200", "time.checkpoints=0.1", "time.t_end=0.1"]))
    with pytest.raises(GridMismatch):
        compare_fields(a, b, 0.1)


def test_compare_fields_symmetric(small_runs):
    a, b = small_runs[200], small_runs[400]
    assert compare_fields(a, b, 0.3) == compare_fields(b, a, 0.3)
    assert compare_fields(a, b, 0.3)[0] > 0


def test_observed_orders():
    assert observed_orders([0.4, 0.2, 0.1]) == [1.0, 1.0]
    assert math.isnan(observed_orders([0.0, 0.1])[0])


def test_overshoot_constant():
    assert fit_overshoot_constant([0.4, 0.2], [1.2, 1.05]) == pytest.approx(0.5)
    assert fit_overshoot_constant([0.4, 0.2], [0.9, 1.0]) == 0.0


def test_slope_constant_of_fan():
    # fan rho = (1 - x/t)/2 has slope -1/(2t) in the local model
    g = Grid(-3, 3, 600)
    states = [state(np.clip(0.5 * (1 - g.centers / t), 0, 1), t=t) for t in (0.5, 1.0, 1.5)]
    assert slope_constant(states, None, g) == pytest.approx(0.5, rel=1e-9)
    t, m = oleinik_monitor(states, None, g)
    assert list(t) == [0.5, 1.0, 1.5]
    with pytest.raises(InsufficientData):
        slope_constant(states[:1], None, g, t_min=1.0 + 5)


def test_slope_constant_nonlocal_zero_for_increasing_xi():
    g = Grid(0, 10, 100)
    s = state(np.where(g.centers < 8, 0.5, 0.0), t=1.0)
    # xi increases towards the rear edge of the block only where it drops; the drop is bounded by 0.5/eps
    k = slope_constant([s], exponential_kernel(0.5), g)
    assert 0 < k <= 0.5 / 0.5 + 1e-12
