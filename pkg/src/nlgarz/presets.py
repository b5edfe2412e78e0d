"""Initial density profiles, sampled at cell centers."""

import numpy as np


def smooth_bump(s):
    """C-infinity bump ``exp(1 - 1/(1 - s^2))`` on ``|s| < 1``, peak 1 at 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _ramp(s):
    # 0 -> 1 on s in [0, 1], C^1
    s = np.clip(s, 0.0, 1.0)
    return np.sin(0.5 * np.pi * s) ** 2


def zero(x, rng, **_):
    return np.zeros_like(x)


def bump(x, rng, center=0.0, half_width=1.0, amplitude=0.8):
    return amplitude * smooth_bump((x - center) / half_width)


def plateau(x, rng, left=-1.0, right=1.0, level=1.0, ramp_left=0.0, ramp_right=0.0):
    """``level`` on ``[left, right]``, optional C^1 ramps of given widths outside it."""
    rho = np.where((x >= left) & (x < right), level, 0.0)
    if ramp_left > 0:
        m = (x >= left - ramp_left) & (x < left)
        rho[m] = level * _ramp((x[m] - (left - ramp_left)) / ramp_left)
    if ramp_right > 0:
        m = (x >= right) & (x < right + ramp_right)
        rho[m] = level * _ramp(((right + ramp_right) - x[m]) / ramp_right)
    return rho


def riemann(x, rng, x0=0.0, rho_l=1.0, rho_r=0.0, left=-1.0, right=1.0):
    rho = np.zeros_like(x)
    rho[(x >= left) & (x < x0)] = rho_l
    rho[(x >= x0) & (x < right)] = rho_r
    return rho


def perturbed_bump(x, rng, center=0.0, half_width=1.0, amplitude=0.6, noise=0.05):
    base = bump(x, rng, center, half_width, amplitude)
    jitter = rng.uniform(-noise, noise, size=x.shape)
    return np.clip(np.where(base > 0, base + jitter * (base > 1e-3), 0.0), 0.0, 1.0)


PRESETS = {
    "zero": zero,
    "bump": bump,
    "plateau": plateau,
    "riemann": riemann,
    "perturbed_bump": perturbed_bump,
}


def make_profile(name, x, seed=0, **params):
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown initial preset {name!r}; choose from {sorted(PRESETS)}") from None
    rng = np.random.default_rng(seed)
    return fn(np.asarray(x, dtype=float), rng, **params)
