"""Godunov reference solver for the local system (``eps = 0``, ``xi = rho``).

The flux ``f(rho; u) = rho V(rho, u)`` is concave in ``rho``; the interface
flux is the demand/supply minimum with the marker frozen to the upwind
cell. ``u`` and the markers are advected upwind at the cell speed.
"""

import numpy as np

from .diagnostics import DiagnosticsReport, record_state
from .errors import BlowupDetected, CflViolation, NonconcaveFlux
from .model import validate_velocity
from .solver_nonlocal import SPEED_FLOOR, GridState, Monitor, RunResult, _march

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
PEAK_TOL = 1e-10
U_BUCKET = 1e-4
CONCAVITY_TOL = 1e-10
_RHO_SAMPLES = np.linspace(0.0, 1.0, 33)


def flux(vm, rho, u):
    return rho * vm.V(rho, u)


def _golden_max(vm, u):
    """Vectorized golden-section search for ``argmax_rho f(rho; u)`` on ``[0, 1]``."""
    a = np.zeros_like(u)
    b = np.ones_like(u)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = flux(vm, c, u), flux(vm, d, u)
    while np.max(b - a) > PEAK_TOL:
        left = fc > fd          # maximum lies in [a, d]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        c, d = new_c, new_d
        fc, fd = flux(vm, c, u), flux(vm, d, u)
    return 0.5 * (a + b)


class PeakCache:
    """``rho*(u)`` memoized per quantization bucket of width ``U_BUCKET``."""

    def __init__(self, vm):
        self.vm = vm
        self.table = {}

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        keys = np.rint(u / U_BUCKET).astype(np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        missing = [k for k in uniq.tolist() if k not in self.table]
        if missing:
            found = _golden_max(self.vm, np.array(missing, dtype=float) * U_BUCKET)
            self.table.update(zip(missing, found.tolist()))
        vals = np.array([self.table[k] for k in uniq.tolist()])
        return vals[inv].reshape(u.shape)


def peak_density(vm, u, cache=None):
    """``rho*(u)``, the maximizer of ``rho V(rho, u)`` on ``[0, 1]``."""
    return (cache or PeakCache(vm))(u)


def check_concavity(vm, u):
    """Raise :class:`NonconcaveFlux` if ``d^2/drho^2 (rho V) > tol`` at any sample point."""
    r, uu = np.meshgrid(_RHO_SAMPLES, np.unique(np.asarray(u, dtype=float)), indexing="ij")
    second = 2.0 * vm.d1(r, uu) + r * vm.d11(r, uu)
    if np.max(second) > CONCAVITY_TOL:
        k = np.unravel_index(int(np.argmax(second)), second.shape)
        raise NonconcaveFlux(f"d2f/drho2 = {second[k]:.3g} > 0 at rho = {r[k]:.4g}, u = {uu[k]:.4g}")


def max_char_speed(vm, u):
    """``max |f'(rho; u)|`` over sampled ``rho`` in ``[0, 1]`` for every given ``u``."""
    r, uu = np.meshgrid(_RHO_SAMPLES, np.asarray(u, dtype=float), indexing="ij")
    return float(np.max(np.abs(vm.V(r, uu) + r * vm.d1(r, uu))))


def local_cfl_dt(state, vm, grid, cfl, t_next=None):
    dt = cfl * grid.dx / max(max_char_speed(vm, state.u), SPEED_FLOOR)
    if t_next is not None:
        dt = min(dt, t_next - state.t)
    return dt


def step_godunov(state, vm, grid, dt, inflow=None, cache=None):
    """One Godunov step; ghost cells carry zero density at both ends."""
    cache = cache or PeakCache(vm)
    u_in, z_in, psi_in = inflow if inflow is not None else (state.u[0], state.z[0], state.psi[0])
    check_concavity(vm, state.u)
    lam = dt / grid.dx
    courant = lam * max_char_speed(vm, state.u)
    if courant > 1.0 + 1e-12:
        raise CflViolation(f"Courant number {courant:.6g} > 1")

    rho = state.rho
    rho_l = np.concatenate([[0.0], rho])          # cell left of face i - 1/2, i = 0..n
    u_l = np.concatenate([[u_in], state.u])
    rho_r = np.concatenate([rho, [0.0]])
    star = cache(u_l)
    demand = flux(vm, np.minimum(rho_l, star), u_l)
    supply = flux(vm, np.maximum(rho_r, star), u_l)
    F = np.minimum(demand, supply)
    new_rho = rho - lam * (F[1:] - F[:-1])

    speed = vm.V(rho, state.u)

    def advect(q, q_in):
        prev = np.concatenate([[q_in], q[:-1]])
        return q - lam * speed * (q - prev)

    return GridState(state.t + dt, new_rho, advect(state.u, u_in), advect(state.z, z_in),
                     advect(state.psi, psi_in))


def simulate_local(init, vm, grid, checkpoints, cfl=0.5, ceiling=10.0):
    inflow = (init.u_inf, init.z_inf, float(init.psi[0]))
    cache = PeakCache(vm)
    mon = Monitor()

    def advance(state, tc):
        mon(state.t, state.rho, state.rho, state.u, state.z, state.psi, grid.dx)
        dt = local_cfl_dt(state, vm, grid, cfl, tc)
        new = step_godunov(state, vm, grid, dt, inflow, cache)
        if tc - new.t < 1e-13 * max(1.0, tc):
            new.t = tc
        peak = float(new.rho.max())
        if not peak <= ceiling:
            raise BlowupDetected(new.t, peak, ceiling)
        return new

    states = _march(GridState.from_initial(init), None, checkpoints, advance)
    last = states[-1]
    mon(last.t, last.rho, last.rho, last.u, last.z, last.psi, grid.dx)
    return states, mon.arrays()


def run_local(scenario, checkpoints=None, n_cells=None):
    grid = scenario.grid(n_cells)
    init = scenario.initial(grid)
    vm = scenario.velocity(init)
    vrep = validate_velocity(vm)
    cks = tuple(checkpoints) if checkpoints is not None else scenario.checkpoint_times()
    states, mon = simulate_local(init, vm, grid, cks, scenario.cfl, scenario.blowup_ceiling)
    echo = {
        "name": scenario.name, "scheme": "godunov",
        "x_lo": grid.x_lo, "x_hi": grid.x_hi, "n_cells": grid.n,
        "t_end": scenario.t_end, "cfl": scenario.cfl,
        "law": scenario.law, "law_params": dict(scenario.law_params),
        "preset": scenario.preset, "preset_params": dict(scenario.preset_params),
        "u_inf": init.u_inf, "z_inf": init.z_inf, "z0_norm": init.z_norm,
        "alpha_V": vrep.alpha_v, "beta_V": vrep.beta_v, "C_V": vrep.c_v,
    }
    report = DiagnosticsReport(
        scenario=echo,
        records=[record_state(s, None, grid, scenario.window) for s in states],
        monitor=mon,
    )
    return RunResult("godunov", grid, None, vm, init, states, mon, report)
