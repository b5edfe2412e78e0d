"""Time integration of the nonlocal system

    rho_t + (V(xi, u) rho)_x = 0,   u_t + V(xi, u) u_x = 0,

with the markers ``z`` (``u_x = rho z``) and ``psi`` (``z_x = rho psi``)
carried along. Three schemes share the same data types:

* Eulerian: first-order upwind finite volumes,
* Lagrangian: particles moving along characteristics (Heun),
* Picard: the fixed-point iteration that freezes ``u``, solves the nonlocal
  continuity equation, and rebuilds ``u`` from the transported markers.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .convolution import compute_xi
from .diagnostics import DiagnosticsReport, record_state
from .errors import BlowupDetected, CflViolation, HorizonWarning, KernelKindMismatch, OrderingLost
from .model import (blowup_horizon, check_nonneg_marker, cumulative_left, epsilon_global_threshold,
                    validate_kernel, validate_velocity)

SPEED_FLOOR = 1e-12


@dataclass
class GridState:
    """Fields at time ``t``: cell densities ``rho``; ``u``, ``z``, ``psi`` per cell."""

    t: float
    rho: np.ndarray
    u: np.ndarray
    z: np.ndarray
    psi: np.ndarray

    def copy(self):
        return GridState(self.t, self.rho.copy(), self.u.copy(), self.z.copy(), self.psi.copy())

    @classmethod
    def from_initial(cls, init):
        return cls(0.0, init.rho.copy(), init.u.copy(), init.z.copy(), init.psi.copy())


@dataclass
class ParticleEnsemble:
    """Sorted particle positions with masses and the Lagrangian markers they carry."""

    x: np.ndarray
    m: np.ndarray
    u: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    t: float = 0.0

    @classmethod
    def from_initial(cls, init):
        """One particle per occupied cell, at its center, with the cell mass."""
        g = init.grid
        occ = np.flatnonzero(init.rho > 0)
        # marker values at cell centers: half a cell of the cumulative rule past the left face
        u_c = init.u + 0.5 * g.dx * init.rho * init.z
        z_c = init.z + 0.5 * g.dx * init.rho * init.psi
        return cls(g.centers[occ].copy(), init.rho[occ] * g.dx, u_c[occ].copy(), z_c[occ].copy(),
                   init.psi[occ].copy())


@dataclass
class PicardTrace:
    q_times: np.ndarray
    q_samples: list = field(default_factory=list)   # Q_n(t) per iteration
    sup_q: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    no_contraction: bool = False

    def ratios(self):
        q = self.sup_q
        return [q[i + 1] / q[i] if q[i] > 0 else float("nan") for i in range(len(q) - 1)]

    def as_dict(self):
        return {"sup_q": list(map(float, self.sup_q)), "converged": self.converged,
                "iterations": self.iterations, "no_contraction": self.no_contraction,
                "ratios": self.ratios()}


class Monitor:
    """Per-step extrema, kept alongside the run (the solver's own bookkeeping)."""

    keys = ("t", "mass", "rho_min", "rho_max", "xi_min", "xi_max", "u_min", "u_max", "z_abs", "psi_abs")

    def __init__(self):
        self.data = {k: [] for k in self.keys}

    def __call__(self, t, rho, xi, u, z, psi, dx):
        d = self.data
        d["t"].append(t)
        d["mass"].append(float(np.sum(rho) * dx))
        d["rho_min"].append(float(rho.min()))
        d["rho_max"].append(float(rho.max()))
        d["xi_min"].append(float(xi.min()))
        d["xi_max"].append(float(xi.max()))
        d["u_min"].append(float(u.min()))
        d["u_max"].append(float(u.max()))
        d["z_abs"].append(float(np.abs(z).max()))
        d["psi_abs"].append(float(np.abs(psi).max()))

    def arrays(self):
        return {k: np.array(v) for k, v in self.data.items()}


@dataclass
class RunResult:
    scheme: str
    grid: object
    kernel: object
    velocity: object
    initial: object
    states: list
    monitor: dict
    report: DiagnosticsReport
    warnings: list = field(default_factory=list)
    horizon: float = math.inf
    eps_threshold: float = math.inf

    @property
    def max_rho(self):
        return float(np.max(self.monitor["rho_max"]))

    @property
    def final(self):
        return self.states[-1]


# ---------------------------------------------------------------------------
# Eulerian scheme
# ---------------------------------------------------------------------------


def _face_speeds(xi, u, vm, u_in):
    """``v[i] = V(xi[i], u[i-1])`` at faces ``i - 1/2``, ``i = 0..n`` (``xi[n] = 0``)."""
    xi_f = np.append(xi, 0.0)
    u_up = np.concatenate([[u_in], u])
    return np.asarray(vm.V(xi_f, u_up), dtype=float)


def _max_speed(xi, u, vm, u_in):
    return max(float(_face_speeds(xi, u, vm, u_in).max()), float(np.max(vm.V(xi, u))))


def cfl_dt(state, vm, kernel, grid, cfl, t_next=None, xi=None):
    """``cfl * dx / max V``, never past ``t_next``."""
    if xi is None:
        xi = compute_xi(state.rho, kernel, grid).xi
    vmax = _max_speed(xi, state.u, vm, state.u[0])
    dt = cfl * grid.dx / max(vmax, SPEED_FLOOR)
    if t_next is not None:
        dt = min(dt, t_next - state.t)
    return dt


def step_eulerian(state, vm, kernel, grid, dt, inflow=None, xi=None):
    """One upwind step.

    Interface speed ``V(xi[i+1], u[i])`` (downstream perceived density,
    upwind marker); ``u``, ``z``, ``psi`` are advected from the left at the
    cell speed ``V(xi[i], u[i])``. ``inflow`` is ``(u, z, psi)`` entering at
    the left boundary (default: the current left cell values); ``rho``
    enters as 0.
    """
    if xi is None:
        xi = compute_xi(state.rho, kernel, grid).xi
    u_in, z_in, psi_in = inflow if inflow is not None else (state.u[0], state.z[0], state.psi[0])
    vf = _face_speeds(xi, state.u, vm, u_in)
    vc = np.asarray(vm.V(xi, state.u), dtype=float)
    lam = dt / grid.dx
    courant = lam * max(float(vf.max()), float(vc.max()))
    if courant > 1.0 + 1e-12:
        raise CflViolation(f"Courant number {courant:.6g} > 1")
    flux = np.concatenate([[0.0], state.rho]) * vf
    rho = state.rho - lam * (flux[1:] - flux[:-1])

    def advect(q, q_in):
        prev = np.concatenate([[q_in], q[:-1]])
        return q - lam * vc * (q - prev)

    return GridState(state.t + dt, rho, advect(state.u, u_in), advect(state.z, z_in),
                     advect(state.psi, psi_in))


# ---------------------------------------------------------------------------
# Lagrangian scheme
# ---------------------------------------------------------------------------


def particle_xi(x, m, epsilon):
    """``xi(X_j) = sum_{k>j} (m_k/eps) exp((X_j - X_k)/eps)``; own mass excluded.

    Evaluated right to left as a cumulative log-sum-exp, O(N) and overflow free.
    """
    with np.errstate(divide="ignore"):
        lw = np.log(m) - x / epsilon
    acc = np.logaddexp.accumulate(lw[::-1])[::-1]   # log sum_{k>=j}
    out = np.zeros_like(x)
    out[:-1] = np.exp(acc[1:] + x[:-1] / epsilon) / epsilon
    return out


def step_lagrangian(ens, vm, kernel, dt):
    """Heun step of every particle along ``dX/dt = V(xi(X), u_j)``; markers unchanged."""
    if kernel.kind != "exponential":
        raise KernelKindMismatch("the particle scan is written for the exponential kernel")
    eps = kernel.epsilon
    v1 = np.asarray(vm.V(particle_xi(ens.x, ens.m, eps), ens.u), dtype=float)
    x1 = ens.x + dt * v1
    v2 = np.asarray(vm.V(particle_xi(x1, ens.m, eps), ens.u), dtype=float)
    x = ens.x + 0.5 * dt * (v1 + v2)
    if x.size > 1 and np.any(np.diff(x) <= 0):
        j = int(np.argmax(np.diff(x) <= 0))
        raise OrderingLost(f"particles {j} and {j + 1} crossed at t = {ens.t + dt:.6g}; reduce dt")
    return ParticleEnsemble(x, ens.m, ens.u, ens.z, ens.psi, ens.t + dt)


def cloud_edges(x, dx):
    """Edges of the top-hat cloud of every particle.

    Interior edges are midpoints between neighbours; the outer clouds are
    mirrored (a lone particle gets width ``dx``). For particles spaced
    exactly ``dx`` this is the usual cloud-in-cell.
    """
    if x.size == 1:
        return np.array([x[0] - 0.5 * dx, x[0] + 0.5 * dx])
    mids = 0.5 * (x[1:] + x[:-1])
    return np.concatenate([[2.0 * x[0] - mids[0]], mids, [2.0 * x[-1] - mids[-1]]])


def reconstruct_density(ens, grid):
    """Cloud-in-cell deposit with clouds sized to the local particle spacing.

    A fixed cloud width aliases as soon as the spacing drifts from ``dx``
    (compression or expansion), leaving an O(1) ripple; sizing each cloud
    to its own gap keeps the reconstruction first-order accurate. Mass
    falling outside the grid is kept in the end cells, so the total is
    preserved.
    """
    if ens.x.size == 0:
        return np.zeros(grid.n)
    cum = np.concatenate([[0.0], np.cumsum(ens.m)])
    M = np.interp(grid.all_faces, cloud_edges(ens.x, grid.dx), cum)
    M[0], M[-1] = 0.0, cum[-1]
    return np.diff(M) / grid.dx


def ensemble_to_state(ens, grid, inflow):
    """Grid fields of a particle ensemble: CIC density, markers interpolated to the left faces."""
    rho = reconstruct_density(ens, grid)
    u_in, z_in, psi_in = inflow
    faces = grid.faces
    if ens.x.size == 0:
        n = grid.n
        return GridState(ens.t, rho, np.full(n, u_in), np.full(n, z_in), np.full(n, psi_in))
    u = np.interp(faces, ens.x, ens.u, left=u_in, right=ens.u[-1])
    z = np.interp(faces, ens.x, ens.z, left=z_in, right=ens.z[-1])
    psi = np.interp(faces, ens.x, ens.psi, left=psi_in, right=ens.psi[-1])
    return GridState(ens.t, rho, u, z, psi)


def _lagrangian_dt(ens, vm, kernel, grid, cfl):
    if ens.x.size == 0:
        return math.inf
    v = np.asarray(vm.V(particle_xi(ens.x, ens.m, kernel.epsilon), ens.u), dtype=float)
    return cfl * grid.dx / max(float(v.max()), SPEED_FLOOR)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _scenario_echo(scenario, grid, kernel, vrep, init, horizon, eps0, scheme):
    return {
        "name": scenario.name,
        "scheme": scheme,
        "x_lo": grid.x_lo, "x_hi": grid.x_hi, "n_cells": grid.n,
        "t_end": scenario.t_end, "cfl": scenario.cfl,
        "kernel": kernel.kind, "epsilon": kernel.epsilon,
        "law": scenario.law, "law_params": dict(scenario.law_params),
        "preset": scenario.preset, "preset_params": dict(scenario.preset_params),
        "u_inf": init.u_inf, "z_inf": init.z_inf,
        "z0_norm": init.z_norm, "psi0_norm": init.psi_norm,
        "u0_range": list(init.u_range), "rho0_max": float(init.rho.max()),
        "alpha_V": vrep.alpha_v, "beta_V": vrep.beta_v, "C_V": vrep.c_v, "passes_V3": vrep.passes_v3,
        "blowup_horizon": horizon, "eps_threshold": eps0,
        "z0_nonneg": check_nonneg_marker(init.z),
    }


def _setup(scenario, epsilon=None, n_cells=None):
    grid = scenario.grid(n_cells)
    init = scenario.initial(grid)
    vm = scenario.velocity(init)
    kernel = scenario.kernel(epsilon)
    vrep = validate_velocity(vm)
    validate_kernel(kernel)
    horizon = blowup_horizon(vm, init.z_norm)
    eps0 = epsilon_global_threshold(vm, init.z_norm, kernel.eta0)
    return grid, init, vm, kernel, vrep, horizon, eps0


def _march(state0, t_end, checkpoints, advance):
    """Drive ``advance(state, t_next) -> state`` through every checkpoint."""
    out = [state0]
    state = state0
    for tc in sorted(checkpoints):
        while state.t < tc - 1e-13 * max(1.0, tc):
            state = advance(state, tc)
        state.t = tc
        out.append(state)
    return out


def simulate_eulerian(init, vm, kernel, grid, t_end, checkpoints, cfl=0.5, ceiling=10.0):
    inflow = (init.u_inf, init.z_inf, float(init.psi[0]))
    mon = Monitor()

    def advance(state, tc):
        xi = compute_xi(state.rho, kernel, grid).xi
        mon(state.t, state.rho, xi, state.u, state.z, state.psi, grid.dx)
        dt = cfl_dt(state, vm, kernel, grid, cfl, tc, xi=xi)
        new = step_eulerian(state, vm, kernel, grid, dt, inflow, xi=xi)
        if tc - new.t < 1e-13 * max(1.0, tc):
            new.t = tc
        peak = float(new.rho.max())
        if not peak <= ceiling:
            raise BlowupDetected(new.t, peak, ceiling)
        return new

    states = _march(GridState.from_initial(init), t_end, checkpoints, advance)
    last = states[-1]
    mon(last.t, last.rho, compute_xi(last.rho, kernel, grid).xi, last.u, last.z, last.psi, grid.dx)
    return states, mon.arrays()


def simulate_lagrangian(init, vm, kernel, grid, t_end, checkpoints, cfl=0.5, ceiling=10.0):
    inflow = (init.u_inf, init.z_inf, float(init.psi[0]))
    mon = Monitor()
    ens_box = [ParticleEnsemble.from_initial(init)]

    def observe(ens):
        st = ensemble_to_state(ens, grid, inflow)
        xi = compute_xi(st.rho, kernel, grid).xi
        mon(ens.t, st.rho, xi, st.u, st.z, st.psi, grid.dx)
        return st

    def advance(state, tc):
        ens = ens_box[0]
        observe(ens)
        dt = min(_lagrangian_dt(ens, vm, kernel, grid, cfl), tc - ens.t)
        ens = step_lagrangian(ens, vm, kernel, dt)
        if tc - ens.t < 1e-13 * max(1.0, tc):
            ens.t = tc
        ens_box[0] = ens
        st = ensemble_to_state(ens, grid, inflow)
        peak = float(st.rho.max())
        if not peak <= ceiling:
            raise BlowupDetected(ens.t, peak, ceiling)
        return st

    first = ensemble_to_state(ens_box[0], grid, inflow)
    states = _march(first, t_end, checkpoints, advance)
    observe(ens_box[0])
    return states, mon.arrays(), ens_box[0]


def run(scenario, scheme=None, checkpoints=None, epsilon=None, n_cells=None):
    """Run a scenario with the Eulerian or Lagrangian scheme.

    Emits :class:`HorizonWarning` when ``t_end`` exceeds the guaranteed
    existence horizon and neither the global-in-time threshold nor
    ``z0 >= 0`` applies; the run continues while ``rho`` is monitored
    against the blow-up ceiling.
    """
    scheme = scheme or scenario.scheme
    grid, init, vm, kernel, vrep, horizon, eps0 = _setup(scenario, epsilon, n_cells)
    cks = tuple(checkpoints) if checkpoints is not None else scenario.checkpoint_times()
    notes = []
    if scenario.t_end > horizon and not kernel.epsilon <= eps0 and not check_nonneg_marker(init.z):
        msg = (f"t_end = {scenario.t_end:g} exceeds the existence horizon {horizon:.4g} and "
               f"eps = {kernel.epsilon:g} > threshold {eps0:.4g} with z0 changing sign")
        warnings.warn(msg, HorizonWarning, stacklevel=2)
        notes.append(msg)
    if scheme == "eulerian":
        states, mon = simulate_eulerian(init, vm, kernel, grid, scenario.t_end, cks, scenario.cfl,
                                        scenario.blowup_ceiling)
    elif scheme == "lagrangian":
        states, mon, _ = simulate_lagrangian(init, vm, kernel, grid, scenario.t_end, cks, scenario.cfl,
                                             scenario.blowup_ceiling)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    report = DiagnosticsReport(
        scenario=_scenario_echo(scenario, grid, kernel, vrep, init, horizon, eps0, scheme),
        records=[record_state(s, kernel, grid, scenario.window) for s in states],
        monitor=mon,
    )
    return RunResult(scheme, grid, kernel, vm, init, states, mon, report, notes, horizon, eps0)


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------


def _picard_sweep(init, vm, kernel, grid, dt, n_steps, u_frozen):
    """Solve the continuity equation with ``V(xi, u_frozen)`` and rebuild the markers.

    Returns per-level ``rho``, ``u``, ``z``, ``psi`` and characteristic
    positions of particles starting at the cell centers.
    """
    lam = dt / grid.dx
    faces = grid.all_faces
    rho = init.rho.copy()
    psi = init.psi.copy()
    psi_in = float(init.psi[0])
    X = grid.centers.copy()
    out = {"rho": [rho], "u": [init.u.copy()], "z": [init.z.copy()], "psi": [psi], "X": [X]}

    xi = compute_xi(rho, kernel, grid).xi
    vf = _face_speeds(xi, u_frozen[0], vm, init.u_inf)
    for k in range(n_steps):
        vc = np.asarray(vm.V(xi, u_frozen[k]), dtype=float)
        courant = lam * max(float(vf.max()), float(vc.max()))
        if courant > 1.0 + 1e-12:
            raise CflViolation(f"Courant number {courant:.6g} > 1 in Picard sweep")
        flux = np.concatenate([[0.0], rho]) * vf
        rho_new = rho - lam * (flux[1:] - flux[:-1])
        psi_new = psi - lam * vc * (psi - np.concatenate([[psi_in], psi[:-1]]))

        xi_new = compute_xi(rho_new, kernel, grid).xi
        vf_new = _face_speeds(xi_new, u_frozen[k + 1], vm, init.u_inf)
        v1 = np.interp(X, faces, vf)
        xs = X + dt * v1
        X = X + 0.5 * dt * (v1 + np.interp(xs, faces, vf_new))

        z_new = cumulative_left(rho_new * psi_new, init.z_inf, grid.dx)
        u_new = cumulative_left(rho_new * z_new, init.u_inf, grid.dx)
        rho, psi, xi, vf = rho_new, psi_new, xi_new, vf_new
        for key, val in (("rho", rho), ("u", u_new), ("z", z_new), ("psi", psi), ("X", X)):
            out[key].append(val)
    return out


def run_picard(scenario, max_iters=None, q_tol=None, epsilon=None, n_cells=None):
    """Picard iteration on ``[0, delta]`` with ``delta = scenario.t_end``.

    Iterate ``n = 1, 2, ...``: freeze ``u_n`` (``u_1 = u0``), solve for
    ``rho_{n+1}`` on a fixed time grid, move particles along the frozen
    field, transport ``psi``, rebuild ``z`` and ``u_{n+1}`` by the
    cumulative rule, and record

        Q_n(t) = sum_j rho0(x_j) |X_{n+1}(t, x_j) - X_n(t, x_j)| dx

    at every time level (``X_1`` is the identity). Stops when
    ``sup_t Q_n < q_tol * Q_1`` or after ``max_iters``; three consecutive
    non-decreasing ``Q`` flag ``no_contraction``.
    """
    max_iters = scenario.max_iters if max_iters is None else max_iters
    q_tol = scenario.q_tol if q_tol is None else q_tol
    grid, init, vm, kernel, vrep, horizon, eps0 = _setup(scenario, epsilon, n_cells)
    delta = scenario.t_end
    if delta > horizon / 2:
        warnings.warn(f"Picard horizon {delta:g} exceeds half the existence horizon {horizon:.4g}",
                      HorizonWarning, stacklevel=2)
    # fixed time grid shared by all iterations; V <= V(0, u) bounds every speed
    u_probe = np.linspace(vm.u_min, vm.u_max, 65)
    vbound = max(float(np.max(vm.V(np.zeros_like(u_probe), u_probe))), SPEED_FLOOR)
    n_steps = max(1, int(math.ceil(delta / (scenario.cfl * grid.dx / vbound))))
    dt = delta / n_steps
    times = dt * np.arange(n_steps + 1)

    u_frozen = [init.u] * (n_steps + 1)
    X_prev = [grid.centers] * (n_steps + 1)
    w = init.rho * grid.dx
    trace = PicardTrace(q_times=times)
    rising = 0
    sweep = None
    for n in range(1, max_iters + 1):
        sweep = _picard_sweep(init, vm, kernel, grid, dt, n_steps, u_frozen)
        q = np.array([np.sum(w * np.abs(a - b)) for a, b in zip(sweep["X"], X_prev)])
        trace.q_samples.append(q)
        trace.sup_q.append(float(q.max()))
        trace.iterations = n
        q1 = trace.sup_q[0]
        if trace.sup_q[-1] == 0 or trace.sup_q[-1] < q_tol * q1:
            trace.converged = True
            break
        if n > 1 and trace.sup_q[-1] >= trace.sup_q[-2]:
            rising += 1
            if rising >= 3:
                trace.no_contraction = True
                break
        else:
            rising = 0
        u_frozen = sweep["u"]
        X_prev = sweep["X"]

    cks = scenario.checkpoint_times()
    states = [GridState(0.0, sweep["rho"][0], sweep["u"][0], sweep["z"][0], sweep["psi"][0])]
    for tc in cks:
        k = int(round(tc / dt))
        k = min(max(k, 0), n_steps)
        states.append(GridState(float(times[k]), sweep["rho"][k], sweep["u"][k], sweep["z"][k], sweep["psi"][k]))
    report = DiagnosticsReport(
        scenario=_scenario_echo(scenario, grid, kernel, vrep, init, horizon, eps0, "picard"),
        records=[record_state(s, kernel, grid, scenario.window) for s in states],
        fits={"picard": trace.as_dict()},
    )
    mon = {"t": times, "rho_max": np.array([r.max() for r in sweep["rho"]])}
    result = RunResult("picard", grid, kernel, vm, init, states, mon, report, [], horizon, eps0)
    return result, trace
