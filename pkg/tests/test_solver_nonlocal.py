import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlgarz.config import load_shipped
from nlgarz.diagnostics import consistency_residual
from nlgarz.errors import BlowupDetected, CflViolation, HorizonWarning, KernelKindMismatch, OrderingLost
from nlgarz.grid import Grid
from nlgarz.model import build_initial_data, exponential_kernel, tabulated_kernel, velocity_law
from nlgarz.solver_nonlocal import (GridState, ParticleEnsemble, cfl_dt, cloud_edges, ensemble_to_state,
                                    particle_xi, reconstruct_density, run, run_picard, step_eulerian,
                                    step_lagrangian)

GS = velocity_law("greenshields", 0.5, 1.0)


def five_cell_state():
    g = Grid(0.0, 5.0, 5)
    rho = np.array([0.0, 0.4, 0.9, 0.3, 0.0])
    u = np.array([0.9, 0.8, 0.7, 0.75, 0.6])
    z = np.array([0.1, -0.2, 0.3, 0.0, 0.5])
    psi = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    return g, GridState(0.0, rho, u, z, psi)


def hand_step(g, s, eps, dt, inflow):
    """Loop-by-loop oracle of one upwind step, kernel sums written out."""
    n, dx = g.n, g.dx
    e = math.exp(-dx / eps)
    xi = [0.0] * (n + 1)
    for i in range(n):
        for j in range(i, n):
            xi[i] += s.rho[j] * (e ** (j - i)) * (1 - e)
    u_ext = [inflow[0]] + list(s.u)
    F = [0.0] * (n + 1)
    for i in range(n + 1):
        left_rho = s.rho[i - 1] if i > 0 else 0.0
        F[i] = left_rho * u_ext[i] * (1 - xi[i])
    lam = dt / dx
    rho = [s.rho[i] - lam * (F[i + 1] - F[i]) for i in range(n)]
    out = {"rho": rho}
    for name, q, q_in in (("u", s.u, inflow[0]), ("z", s.z, inflow[1]), ("psi", s.psi, inflow[2])):
        new = []
        for i in range(n):
            prev = q[i - 1] if i > 0 else q_in
            new.append(q[i] - lam * s.u[i] * (1 - xi[i]) * (q[i] - prev))
        out[name] = new
    return out


def test_eulerian_step_matches_hand_oracle():
    g, s = five_cell_state()
    k = exponential_kernel(0.7)
    inflow = (0.95, 0.05, 1.5)
    new = step_eulerian(s, GS, k, g, 0.4, inflow)
    ref = hand_step(g, s, 0.7, 0.4, inflow)
    for name in ("rho", "u", "z", "psi"):
        assert np.allclose(getattr(new, name), ref[name], atol=1e-14, rtol=0), name
    assert new.t == 0.4


def test_eulerian_step_rejects_large_dt():
    g, s = five_cell_state()
    with pytest.raises(CflViolation):
        step_eulerian(s, GS, exponential_kernel(0.7), g, 2.0)


def test_cfl_dt_examples():
    g, s = five_cell_state()
    k = exponential_kernel(0.7)
    dt = cfl_dt(s, GS, k, g, 0.5)
    e = math.exp(-1 / 0.7)
    xi = [sum(s.rho[j] * e ** (j - i) * (1 - e) for j in range(i, 5)) for i in range(5)] + [0.0]
    u_up = [s.u[0]] + list(s.u)
    speeds = [u_up[i] * (1 - xi[i]) for i in range(6)] + [s.u[i] * (1 - xi[i]) for i in range(5)]
    assert dt == pytest.approx(0.5 / max(speeds), rel=1e-14)
    assert cfl_dt(s, GS, k, g, 0.5, t_next=0.1) == pytest.approx(0.1)
    frozen = GridState(0.0, s.rho, np.zeros(5), s.z, s.psi)
    assert cfl_dt(frozen, GS, k, g, 0.5) == pytest.approx(0.5 / 1e-12)


def test_eulerian_step_conserves_mass_without_outflow():
    g, s = five_cell_state()
    new = step_eulerian(s, GS, exponential_kernel(0.7), g, 0.3)
    assert np.sum(new.rho) == pytest.approx(np.sum(s.rho), abs=1e-15)


# -- particles --------------------------------------------------------------


def test_particle_xi_two_body():
    x, m, eps = np.array([0.0, 0.3]), np.array([0.2, 0.5]), 0.25
    xi = particle_xi(x, m, eps)
    assert xi[1] == 0.0
    assert xi[0] == pytest.approx(0.5 / eps * math.exp(-0.3 / eps), rel=1e-14)


def test_particle_xi_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(-50, 50, 200))
    m = rng.uniform(0, 0.1, 200)
    eps = 0.05
    ref = np.array([np.sum(m[j + 1:] / eps * np.exp((x[j] - x[j + 1:]) / eps)) for j in range(200)])
    assert np.allclose(particle_xi(x, m, eps), ref, rtol=1e-12, atol=1e-300)


def test_free_flow_particle():
    ens = ParticleEnsemble(np.array([0.0]), np.array([0.1]), np.array([0.8]), np.zeros(1), np.zeros(1))
    out = step_lagrangian(ens, GS, exponential_kernel(0.1), 0.25)
    assert out.x[0] == pytest.approx(0.2, abs=1e-15) and out.t == 0.25


def test_leading_particle_slows_follower():
    ens = ParticleEnsemble(np.array([0.0, 0.05]), np.array([0.05, 0.05]), np.ones(2), np.zeros(2), np.zeros(2))
    out = step_lagrangian(ens, GS, exponential_kernel(0.1), 0.01)
    assert out.x[1] - 0.05 == pytest.approx(0.01, abs=1e-15)
    assert out.x[0] < 0.01


def test_uniform_plateau_translates_rigidly_in_interior():
    # deep inside a long uniform train each particle sees the same xi
    n, dx, eps = 400, 0.01, 0.05
    x = (np.arange(n) + 0.5) * dx
    ens = ParticleEnsemble(x, np.full(n, 0.5 * dx), np.ones(n), np.zeros(n), np.zeros(n))
    out = step_lagrangian(ens, GS, exponential_kernel(eps), 0.001)
    shift = out.x - x
    assert np.ptp(shift[:100]) <= 1e-12
    assert np.all(np.diff(shift) >= -1e-15)


def test_crossing_particles_detected():
    ens = ParticleEnsemble(np.array([0.0, 0.01]), np.array([0.001, 0.001]), np.array([1.0, 0.0]),
                           np.zeros(2), np.zeros(2))
    with pytest.raises(OrderingLost):
        step_lagrangian(ens, GS, exponential_kernel(0.1), 0.5)


def test_particles_need_exponential_kernel():
    ens = ParticleEnsemble(np.array([0.0]), np.array([0.1]), np.ones(1), np.zeros(1), np.zeros(1))
    with pytest.raises(KernelKindMismatch):
        step_lagrangian(ens, GS, tabulated_kernel([-1.0, 0.0], [0.0, 2.0]), 0.1)


def test_uniform_particles_reproduce_cell_density():
    g = Grid(0, 1, 50)
    rng = np.random.default_rng(5)
    rho = np.zeros(50)
    rho[5:45] = rng.uniform(0.1, 1, 40)
    ens = ParticleEnsemble(g.centers[5:45], rho[5:45] * g.dx, np.ones(40), np.zeros(40), np.zeros(40))
    assert np.allclose(reconstruct_density(ens, g), rho, atol=1e-13)


def test_cloud_edges_lone_particle():
    assert cloud_edges(np.array([0.3]), 0.1).tolist() == pytest.approx([0.25, 0.35])


@given(st.integers(1, 80), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_reconstruction_preserves_mass(n, seed):
    rng = np.random.default_rng(seed)
    g = Grid(0, 1, 64)
    x = np.sort(rng.uniform(-0.2, 1.2, n))
    m = rng.uniform(0, 0.05, n)
    rho = reconstruct_density(ParticleEnsemble(x, m, np.ones(n), np.zeros(n), np.zeros(n)), g)
    assert np.sum(rho) * g.dx == pytest.approx(np.sum(m), rel=1e-12, abs=1e-15)
    assert np.all(rho >= -1e-12)


def test_empty_ensemble_state():
    g = Grid(0, 1, 8)
    ens = ParticleEnsemble(np.array([]), np.array([]), np.array([]), np.array([]), np.array([]))
    st_ = ensemble_to_state(ens, g, (0.7, 0.1, 0.2))
    assert np.all(st_.rho == 0) and np.all(st_.u == 0.7) and np.all(st_.z == 0.1) and np.all(st_.psi == 0.2)


# -- drivers -------------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["eulerian", "lagrangian"])
def test_zero_scenario_stays_zero(scheme):
    res = run(load_shipped("zero_density"), scheme=scheme)
    for s in res.states:
        assert np.all(s.rho == 0) and np.all(s.u == 1.0) and np.all(s.z == 0.0)
    assert res.final.t == 0.5


def test_horizon_warning():
    sc = load_shipped("stress_compression", ["kernel.epsilon=0.8", "time.t_end=0.3", "time.n_checkpoints=1",
                                             "domain.n_cells=240"])
    with pytest.warns(HorizonWarning):
        res = run(sc)
    assert res.warnings and res.horizon < 0.3


def test_no_warning_below_threshold():
    sc = load_shipped("stress_compression", ["time.t_end=0.3", "time.n_checkpoints=1", "domain.n_cells=240"])
    with warnings.catch_warnings():
        warnings.simplefilter("error", HorizonWarning)
        res = run(sc)
    assert res.eps_threshold == pytest.approx(0.5, rel=1e-9)


def test_blowup_ceiling():
    sc = load_shipped("greenshields_bump", ["run.blowup_ceiling=0.5", "domain.n_cells=200"])
    with pytest.raises(BlowupDetected) as exc:
        run(sc)
    assert exc.value.exit_code == 3


@pytest.mark.parametrize("scheme", ["eulerian", "lagrangian"])
def test_run_invariants(scheme):
    sc = load_shipped("greenshields_bump", ["domain.n_cells=400", "time.t_end=0.5"])
    res = run(sc, scheme=scheme)
    mass0 = np.sum(res.initial.rho) * res.grid.dx
    u0, z0, psi0 = res.initial.u, res.initial.z, res.initial.psi
    for s in res.states:
        assert abs(np.sum(s.rho) * res.grid.dx - mass0) <= 1e-12
        assert s.rho.min() >= -1e-12
        assert u0.min() - 1e-12 <= s.u.min() and s.u.max() <= u0.max() + 1e-12
        assert z0.min() - 1e-12 <= s.z.min() and s.z.max() <= z0.max() + 1e-12
        assert psi0.min() - 1e-12 <= s.psi.min() and s.psi.max() <= psi0.max() + 1e-12
    # z0 >= 0 here, so the density never exceeds its initial maximum
    assert res.max_rho <= res.initial.rho.max() + 1e-8
    assert [s.t for s in res.states] == pytest.approx([0.0] + list(sc.checkpoint_times()))


def test_consistency_residual_shrinks_with_mesh():
    res = []
    for n in (200, 400, 800):
        r = run(load_shipped("greenshields_bump", [f"domain.n_cells={n}", "time.t_end=0.3",
                                                   "time.n_checkpoints=1"]))
        res.append(consistency_residual(r.final, r.grid))
    for a, b in zip(res, res[1:]):
        assert 1.7 <= a / b <= 2.3


# -- Picard ---------------------------------------------------------------------


def test_picard_zero_density_converges_immediately():
    res, trace = run_picard(load_shipped("zero_density"))
    assert trace.sup_q == [0.0] and trace.converged and trace.iterations == 1


def test_picard_constant_u_converges_in_two():
    # with u constant the frozen field never changes, so the second sweep repeats the first
    sc = load_shipped("constant_u_bump", ["domain.n_cells=200", "time.t_end=0.1", "time.checkpoints=0.05,0.1"])
    res, trace = run_picard(sc)
    assert trace.sup_q[0] > 0 and trace.sup_q[1] == 0.0
    assert trace.converged and trace.iterations == 2


def test_picard_contracts():
    sc = load_shipped("greenshields_bump", ["domain.n_cells=200", "time.t_end=0.2",
                                            "time.checkpoints=0.1,0.2", "run.max_iters=4"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonWarning)
        res, trace = run_picard(sc)
    assert all(r < 0.5 for r in trace.ratios())
    assert not trace.no_contraction
    assert [s.t for s in res.states] == pytest.approx([0.0, 0.1, 0.2])
    assert trace.q_times[0] == 0.0 and trace.q_samples[0][0] == 0.0


def test_particle_at_center_fills_its_cell():
    g = Grid(0, 1, 10)
    ens = ParticleEnsemble(np.array([g.centers[4]]), np.array([0.3]), np.ones(1), np.zeros(1), np.zeros(1))
    rho = reconstruct_density(ens, g)
    assert rho[4] == pytest.approx(0.3 / g.dx, rel=1e-14) and np.count_nonzero(rho) == 1


def test_particle_between_centers_splits_evenly():
    g = Grid(0, 1, 10)
    ens = ParticleEnsemble(np.array([0.5]), np.array([0.3]), np.ones(1), np.zeros(1), np.zeros(1))
    rho = reconstruct_density(ens, g)
    assert rho[4] == pytest.approx(0.15 / g.dx, rel=1e-12) and rho[5] == pytest.approx(0.15 / g.dx, rel=1e-12)
    assert np.count_nonzero(rho) == 2
