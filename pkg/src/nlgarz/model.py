"""Velocity laws, convolution kernels and initial data.

Every structural hypothesis of the model is checked here, and the derived
constants (``alpha_V``, ``beta_V``, ``C_V``, existence horizon, global
threshold on the kernel scale) are computed from sampled extrema over the
admissible rectangle ``[0, 1] x [u_min, u_max]``.
"""

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import AssumptionViolated, NegativeU, SupportTooWide
from .grid import Grid

# ---------------------------------------------------------------------------
# velocity laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VelocityModel:
    """A velocity law ``V(xi, u)`` with analytic partial derivatives.

    ``d1``/``d2`` are the partials in the perceived density and in the
    empty-road velocity, ``d11``, ``d12``, ``d22`` the second partials.
    ``strict`` claims ``-d1 >= alpha_V > 0`` on the rectangle.
    """

    name: str
    V: Callable
    d1: Callable
    d2: Callable
    d11: Callable
    d12: Callable
    d22: Callable
    u_min: float = 0.0
    u_max: float = 1.0
    strict: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, xi, u):
        return self.V(xi, u)

    def with_rect(self, u_min, u_max):
        return replace(self, u_min=float(u_min), u_max=float(u_max))


def _cap(xi):
    # V(xi, u) = 0 for xi >= 1
    return np.minimum(xi, 1.0)


def greenshields(u_min=0.5, u_max=1.0):
    """``V = u (1 - xi)``."""
    return VelocityModel(
        name="greenshields",
        V=lambda xi, u: u * (1.0 - _cap(xi)),
        d1=lambda xi, u: -u * np.ones_like(np.asarray(xi, dtype=float)),
        d2=lambda xi, u: (1.0 - _cap(xi)) * np.ones_like(np.asarray(u, dtype=float)),
        d11=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        d12=lambda xi, u: -np.ones(np.broadcast(xi, u).shape),
        d22=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        u_min=u_min, u_max=u_max, strict=u_min > 0,
    )


def quadratic(u_min=0.5, u_max=1.0):
    """``V = u (1 - xi^2)``; not strictly decreasing at ``xi = 0``."""
    return VelocityModel(
        name="quadratic",
        V=lambda xi, u: u * (1.0 - _cap(xi) ** 2),
        d1=lambda xi, u: -2.0 * u * xi,
        d2=lambda xi, u: (1.0 - _cap(xi) ** 2) * np.ones_like(np.asarray(u, dtype=float)),
        d11=lambda xi, u: -2.0 * u * np.ones_like(np.asarray(xi, dtype=float)),
        d12=lambda xi, u: -2.0 * xi * np.ones_like(np.asarray(u, dtype=float)),
        d22=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        u_min=u_min, u_max=u_max, strict=False,
    )


def greenshields_mix(k=0.05, u_min=0.5, u_max=1.0):
    """``V = u (1 - xi)(1 + k xi)`` with ``0 <= k < 1``: concave, ``beta_V = 2 k u_max``."""
    if not 0.0 <= k < 1.0:
        raise ValueError("greenshields_mix needs 0 <= k < 1")

    def V(xi, u):
        c = _cap(xi)
        return u * (1.0 - c) * (1.0 + k * c)

    return VelocityModel(
        name="greenshields_mix",
        V=V,
        d1=lambda xi, u: u * (k - 1.0 - 2.0 * k * xi),
        d2=lambda xi, u: (1.0 - _cap(xi)) * (1.0 + k * _cap(xi)) * np.ones_like(np.asarray(u, dtype=float)),
        d11=lambda xi, u: -2.0 * k * u * np.ones_like(np.asarray(xi, dtype=float)),
        d12=lambda xi, u: (k - 1.0 - 2.0 * k * xi) * np.ones_like(np.asarray(u, dtype=float)),
        d22=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
        u_min=u_min, u_max=u_max, strict=u_min > 0, params={"k": k},
    )


LAWS = {
    "greenshields": greenshields,
    "quadratic": quadratic,
    "greenshields_mix": greenshields_mix,
}


def velocity_law(name, u_min=0.5, u_max=1.0, **params):
    try:
        factory = LAWS[name]
    except KeyError:
        raise ValueError(f"unknown velocity law {name!r}; choose from {sorted(LAWS)}") from None
    return factory(u_min=u_min, u_max=u_max, **params)


@dataclass
class VelocityReport:
    alpha_v: float
    beta_v: float
    c_v: float
    passes_v3: bool
    extrema: dict

    def as_dict(self):
        return {"alpha_V": self.alpha_v, "beta_V": self.beta_v, "C_V": self.c_v,
                "passes_V3": self.passes_v3, "extrema": self.extrema}


def _rect_samples(vm, n):
    xi = np.linspace(0.0, 1.0, n)
    u = np.linspace(vm.u_min, vm.u_max, n)
    return np.meshgrid(xi, u, indexing="ij")


def _witness(mask, xi, u):
    i = np.unravel_index(np.argmax(mask), mask.shape)
    return (float(xi[i]), float(u[i]))


def validate_velocity(vm, samples_per_axis=64):
    """Check the sign conditions on ``V`` and compute its derived constants.

    Raises :class:`AssumptionViolated` with a witness point when a sampled
    point breaks ``V >= 0``, ``d1 V <= 0``, ``d2 V >= 0``, ``V(1, u) = 0`` or
    ``d11 V <= 0``.
    """
    if samples_per_axis < 32:
        raise ValueError("samples_per_axis must be >= 32")
    if not vm.u_min <= vm.u_max:
        raise ValueError(f"ill-formed rectangle u in [{vm.u_min}, {vm.u_max}]")
    xi, u = _rect_samples(vm, samples_per_axis)
    V = np.asarray(vm.V(xi, u), dtype=float)
    d1 = np.asarray(vm.d1(xi, u), dtype=float)
    d2 = np.asarray(vm.d2(xi, u), dtype=float)
    d11 = np.asarray(vm.d11(xi, u), dtype=float)
    d12 = np.asarray(vm.d12(xi, u), dtype=float)
    d22 = np.asarray(vm.d22(xi, u), dtype=float)
    scale = 1.0 + max(np.abs(V).max(), np.abs(d1).max(), np.abs(d2).max(), np.abs(d11).max())
    tol = 1e-12 * scale

    checks = [
        ("V >= 0", V < -tol),
        ("V(1, u) = 0", (xi == 1.0) & (np.abs(V) > tol)),
        ("d1 V <= 0", d1 > tol),
        ("d2 V >= 0", d2 < -tol),
        ("d11 V <= 0", d11 > tol),
    ]
    for name, bad in checks:
        if bad.any():
            raise AssumptionViolated(name, _witness(bad, xi, u))

    alpha = float((-d1).min())
    beta = float((-d11).max()) + 0.0  # no negative zero
    if vm.strict and alpha <= 0:
        raise AssumptionViolated("alpha_V > 0", _witness(-d1 <= 0, xi, u))
    c_v = float((np.abs(V) + np.hypot(d1, d2) + np.sqrt(d11**2 + 2 * d12**2 + d22**2)).max())
    extrema = {
        "V": (float(V.min()), float(V.max())),
        "d1V": (float(d1.min()), float(d1.max())),
        "d2V": (float(d2.min()), float(d2.max())),
        "d11V": (float(d11.min()), float(d11.max())),
    }
    return VelocityReport(alpha, beta, c_v, bool(alpha**2 > 54.0 * beta**2), extrema)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Kernel:
    """Look-ahead kernel ``eta`` supported on the negative half-line.

    ``kind`` is ``"exponential"`` (``eta(x) = e^x`` for ``x < 0``) or
    ``"tabulated"`` (piecewise-linear through ``(table_x, table_values)``,
    zero left of the table). ``epsilon`` rescales it as ``eta(x/eps)/eps``.
    """

    kind: str = "exponential"
    epsilon: float = 1.0
    table_x: np.ndarray = None
    table_values: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("exponential", "tabulated"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("kernel scale epsilon must be positive")
        if self.kind == "tabulated":
            if self.table_x is None or self.table_values is None:
                raise ValueError("tabulated kernel needs table_x and table_values")
            x = np.asarray(self.table_x, dtype=float)
            v = np.asarray(self.table_values, dtype=float)
            if x.shape != v.shape or x.ndim != 1 or x.size < 2:
                raise ValueError("table_x and table_values must be 1-D of equal length >= 2")
            if np.any(np.diff(x) <= 0):
                raise ValueError("table_x must be strictly increasing")
            object.__setattr__(self, "table_x", x)
            object.__setattr__(self, "table_values", v)

    def scaled(self, epsilon):
        return replace(self, epsilon=float(epsilon))

    @property
    def eta0(self):
        """Unscaled value ``eta(0^-)``."""
        if self.kind == "exponential":
            return 1.0
        return float(np.interp(0.0, self.table_x, self.table_values, left=0.0, right=0.0))

    @property
    def reach(self):
        """Unscaled support length (``inf`` for the exponential)."""
        if self.kind == "exponential":
            return np.inf
        return float(-self.table_x[0])

    def density(self, x):
        """Scaled density ``eta_eps(x)``."""
        s = np.asarray(x, dtype=float) / self.epsilon
        if self.kind == "exponential":
            return np.where(s < 0, np.exp(np.minimum(s, 0.0)), 0.0) / self.epsilon
        return np.interp(s, self.table_x, self.table_values, left=0.0, right=0.0) / self.epsilon

    def mass_within(self, d):
        """Scaled mass ``int_{-d}^0 eta_eps`` of the kernel within distance ``d``."""
        s = np.asarray(d, dtype=float) / self.epsilon
        if self.kind == "exponential":
            return -np.expm1(-np.maximum(s, 0.0))
        r = -self.table_x[::-1]          # distances ahead, increasing from -x_max
        v = self.table_values[::-1]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(r))])
        s = np.clip(s, r[0], r[-1])
        k = np.clip(np.searchsorted(r, s, side="right") - 1, 0, r.size - 2)
        t = s - r[k]
        slope = (v[k + 1] - v[k]) / (r[k + 1] - r[k])
        # exact integral of the linear piece on [r_k, s]
        out = cum[k] + v[k] * t + 0.5 * slope * t**2
        if r[0] > 0:
            out = np.where(s <= r[0], 0.0, out)
        return out


def exponential_kernel(epsilon=1.0):
    return Kernel("exponential", epsilon)


def tabulated_kernel(table_x, table_values, epsilon=1.0):
    return Kernel("tabulated", epsilon, np.asarray(table_x, float), np.asarray(table_values, float))


@dataclass
class KernelReport:
    mass: float
    eta0: float
    support: tuple
    monotone: bool = True

    def as_dict(self):
        return {"mass": self.mass, "eta0": self.eta0, "support": list(self.support),
                "monotone": self.monotone}


def validate_kernel(k, quad_points=256):
    """Check nonnegativity, unit mass (1e-10), support in R_- and monotonicity."""
    if quad_points < 256:
        raise ValueError("quad_points must be >= 256")
    if k.kind == "exponential":
        return KernelReport(mass=1.0, eta0=1.0, support=(-np.inf, 0.0))

    x, v = k.table_x, k.table_values
    if (v < 0).any():
        i = int(np.argmax(v < 0))
        raise AssumptionViolated("eta >= 0", (float(x[i]),), f"eta = {v[i]:.3g}")
    if x[-1] > 0 and (v[x > 0] != 0).any():
        i = int(np.argmax((x > 0) & (v != 0)))
        raise AssumptionViolated("supp eta in R_-", (float(x[i]),))
    neg = x <= 0
    xs, vs = x[neg], v[neg]
    dv = np.diff(vs)
    if (dv < -1e-14).any():
        i = int(np.argmax(dv < -1e-14))
        raise AssumptionViolated("eta non-decreasing on R_-", (float(xs[i]), float(xs[i + 1])))
    if xs[-1] < 0 and vs[-1] > 0:
        # the zero extension on (x_max, 0) would drop
        raise AssumptionViolated("eta non-decreasing on R_-", (float(xs[-1]),), "table stops before 0")
    # same checks on a uniform resampling of the interpolant
    fine = np.linspace(xs[0], 0.0, quad_points)
    vf = np.interp(fine, xs, vs)
    if (np.diff(vf) < -1e-14).any():
        i = int(np.argmax(np.diff(vf) < -1e-14))
        raise AssumptionViolated("eta non-decreasing on R_-", (float(fine[i]),))
    # trapezoid is exact for the piecewise-linear interpolant
    mass = float(np.sum(0.5 * (vs[1:] + vs[:-1]) * np.diff(xs)))
    if abs(mass - 1.0) > 1e-10:
        raise AssumptionViolated("unit mass", None, f"mass = {mass!r}")
    return KernelReport(mass=mass, eta0=float(vs[-1]) if xs[-1] == 0 else 0.0,
                        support=(float(xs[0]), 0.0))


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


@dataclass
class InitialData:
    """Sampled initial state.

    ``rho``/``psi`` are cell values; ``z``/``u`` are left-face values built
    by the left-endpoint cumulative rule, so that
    ``z[i+1] - z[i] = rho[i] psi[i] dx`` and ``u[i+1] - u[i] = rho[i] z[i] dx``.
    """

    grid: Grid
    rho: np.ndarray
    psi: np.ndarray
    z: np.ndarray
    u: np.ndarray
    u_inf: float
    z_inf: float

    @property
    def z_norm(self):
        return float(np.abs(self.z).max())

    @property
    def psi_norm(self):
        return float(np.abs(self.psi).max())

    @property
    def u_range(self):
        return float(self.u.min()), float(self.u.max())

    @property
    def mass(self):
        return float(self.rho.sum() * self.grid.dx)


def cumulative_left(values, start, dx):
    """``out[0] = start``, ``out[i+1] = out[i] + values[i] * dx``."""
    inc = np.empty(values.size, dtype=float)
    inc[0] = start
    inc[1:] = values[:-1] * dx
    return np.cumsum(inc)


def build_initial_data(rho0, psi0, u_inf, z_inf, grid, padding=0.05):
    """Assemble ``(rho0, psi0)`` and the far-field values into a full state.

    ``z0 = z_inf + int rho0 psi0`` and ``u0 = u_inf + int rho0 z0`` from the
    left. Raises :class:`SupportTooWide` if ``rho0`` comes closer than
    ``padding * n`` cells to either end, :class:`NegativeU` if ``u0 < 0``.
    """
    rho0 = np.asarray(rho0, dtype=float)
    psi0 = np.broadcast_to(np.asarray(psi0, dtype=float), rho0.shape).copy()
    if rho0.shape != (grid.n,):
        raise ValueError(f"rho0 has shape {rho0.shape}, grid has {grid.n} cells")
    if not np.all(np.isfinite(rho0)) or not np.all(np.isfinite(psi0)):
        raise ValueError("initial data must be finite")
    if rho0.min() < 0 or rho0.max() > 1:
        bad = int(np.argmax((rho0 < 0) | (rho0 > 1)))
        raise AssumptionViolated("0 <= rho0 <= 1", (float(grid.centers[bad]),))
    pad = int(np.ceil(padding * grid.n))
    nz = np.flatnonzero(rho0)
    if nz.size and (nz[0] < pad or nz[-1] > grid.n - 1 - pad):
        raise SupportTooWide(f"support cells [{nz[0]}, {nz[-1]}] need {pad} empty cells each side")
    z0 = cumulative_left(rho0 * psi0, float(z_inf), grid.dx)
    u0 = cumulative_left(rho0 * z0, float(u_inf), grid.dx)
    if u0.min() < 0:
        i = int(np.argmin(u0))
        raise NegativeU((float(grid.faces[i]),), f"min u0 = {u0[i]:.6g}")
    return InitialData(grid, rho0, psi0, z0, u0, float(u_inf), float(z_inf))


def blowup_horizon(vm, z_norm, samples_per_axis=64):
    """Guaranteed existence time ``1 / (C_V ||z0||)``; ``inf`` for constant ``u0``."""
    if z_norm == 0:
        return np.inf
    c_v = validate_velocity(vm, samples_per_axis).c_v
    return 1.0 / (c_v * z_norm)


def epsilon_global_threshold(vm, z_norm, eta0=1.0, samples_per_axis=64):
    """Largest kernel scale for which ``d1V eta(0)/eps + ||z0|| d2V <= 0`` on the rectangle.

    Returns ``inf`` when ``||z0|| = 0`` and ``0`` when no scale works.
    """
    if z_norm == 0:
        return np.inf
    xi, u = _rect_samples(vm, samples_per_axis)
    d1 = np.asarray(vm.d1(xi, u), dtype=float)
    d2 = np.asarray(vm.d2(xi, u), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d2 > 0, d2 / -d1, 0.0)
    ratio = np.where((d2 > 0) & (d1 >= 0), np.inf, ratio)
    worst = float(ratio.max())
    if worst == np.inf:
        return 0.0
    if worst <= 0:
        return np.inf
    return eta0 / (z_norm * worst)


def check_nonneg_marker(z0):
    """True iff ``min z0 >= -1e-12``, enabling the ``rho <= max rho0`` check."""
    return bool(np.min(z0) >= -1e-12)
