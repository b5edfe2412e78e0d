"""Scenario files: ``[section]`` headers and ``key = value`` lines.

A hand-rolled reader is used instead of :mod:`configparser` so that every
value keeps its line number and conversion errors point at the right line.
"""

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import Grid
from .model import build_initial_data, tabulated_kernel, exponential_kernel, velocity_law
from .presets import make_profile

# keys every section understands; sections marked open also take free parameters
SCHEMA = {
    "domain": ({"x_lo", "x_hi", "n_cells"}, False),
    "time": ({"t_end", "cfl", "checkpoints", "n_checkpoints"}, False),
    "kernel": ({"kind", "epsilon", "table_x", "table_values"}, False),
    "velocity": ({"law"}, True),
    "initial": ({"preset", "u_inf", "z_inf", "psi", "seed"}, True),
    "run": ({"scheme", "blowup_ceiling", "window", "max_iters", "q_tol", "jobs"}, False),
    "sweep": ({"epsilons", "n_list", "t_eval", "schemes"}, False),
    "output": ({"dir", "formats"}, False),
    "accept": (set(), True),
}
SCHEMES = ("eulerian", "lagrangian", "godunov")
REQUIRED = {"domain": ("x_lo", "x_hi", "n_cells"), "time": ("t_end",)}


def parse_text(text, path=None):
    """Return ``{section: {key: (value, lineno)}}``."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, path)
            current = line[1:-1].strip().lower()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", lineno, path)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno, path)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        if current is None:
            raise ConfigError("key outside of any [section]", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, path)
        known, is_open = SCHEMA[current]
        if key not in known and not is_open:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno, path)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno, path)
        sections[current][key] = (value, lineno)
    for sec, keys in REQUIRED.items():
        for k in keys:
            if k not in sections.get(sec, {}):
                raise ConfigError(f"missing required key [{sec}] {k}", None, path)
    return sections


def apply_overrides(sections, overrides):
    """Apply ``section.key=value`` strings on top of parsed sections."""
    out = {s: dict(kv) for s, kv in sections.items()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        sec, key = (s.strip() for s in lhs.split(".", 1))
        if sec not in SCHEMA:
            raise ConfigError(f"override names unknown section [{sec}]")
        known, is_open = SCHEMA[sec]
        if key not in known and not is_open:
            raise ConfigError(f"override names unknown key {key!r} in [{sec}]")
        out.setdefault(sec, {})[key] = (value.strip(), None)
    return out


class _Reader:
    def __init__(self, sections, path):
        self.sections = sections
        self.path = path

    def _get(self, sec, key):
        return self.sections.get(sec, {}).get(key)

    def has(self, sec, key):
        return self._get(sec, key) is not None

    def _convert(self, sec, key, conv, what, default):
        item = self._get(sec, key)
        if item is None:
            return default
        value, lineno = item
        try:
            return conv(value)
        except (TypeError, ValueError):
            raise ConfigError(f"[{sec}] {key}: expected {what}, got {value!r}", lineno, self.path) from None

    def float(self, sec, key, default=None):
        return self._convert(sec, key, float, "a number", default)

    def int(self, sec, key, default=None):
        return self._convert(sec, key, int, "an integer", default)

    def str(self, sec, key, default=None):
        return self._convert(sec, key, str, "a string", default)

    def floats(self, sec, key, default=None):
        return self._convert(sec, key, lambda v: tuple(float(s) for s in v.split(",") if s.strip()),
                             "a comma-separated list of numbers", default)

    def ints(self, sec, key, default=None):
        return self._convert(sec, key, lambda v: tuple(int(s) for s in v.split(",") if s.strip()),
                             "a comma-separated list of integers", default)

    def words(self, sec, key, default=None):
        return self._convert(sec, key, lambda v: tuple(s.strip() for s in v.split(",") if s.strip()),
                             "a comma-separated list", default)

    def params(self, sec, skip):
        out = {}
        for key, (value, lineno) in self.sections.get(sec, {}).items():
            if key in skip:
                continue
            try:
                out[key] = float(value)
            except ValueError:
                raise ConfigError(f"[{sec}] {key}: expected a number, got {value!r}", lineno, self.path) from None
        return out

    def line(self, sec, key):
        item = self._get(sec, key)
        return None if item is None else item[1]


@dataclass
class ScenarioConfig:
    name: str
    x_lo: float
    x_hi: float
    n_cells: int
    t_end: float
    cfl: float = 0.5
    checkpoints: tuple = ()
    kernel_kind: str = "exponential"
    epsilons: tuple = (0.1,)
    table_x: tuple = None
    table_values: tuple = None
    law: str = "greenshields"
    law_params: dict = field(default_factory=dict)
    preset: str = "bump"
    preset_params: dict = field(default_factory=dict)
    u_inf: float = 1.0
    z_inf: float = 0.0
    psi: float = 0.0
    seed: int = 0
    scheme: str = "eulerian"
    blowup_ceiling: float = 10.0
    window: float = None
    max_iters: int = 20
    q_tol: float = 1e-6
    sweep_epsilons: tuple = ()
    n_list: tuple = ()
    t_eval: float = None
    out_dir: str = None
    formats: tuple = ("csv", "json", "gp")
    accept: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict, repr=False)
    path: str = None

    @property
    def epsilon(self):
        return self.epsilons[0]

    # -- builders -----------------------------------------------------------

    def grid(self, n_cells=None):
        return Grid(self.x_lo, self.x_hi, int(n_cells or self.n_cells))

    def kernel(self, epsilon=None):
        eps = float(self.epsilon if epsilon is None else epsilon)
        if self.kernel_kind == "tabulated":
            return tabulated_kernel(self.table_x, self.table_values, eps)
        return exponential_kernel(eps)

    def initial(self, grid=None):
        grid = grid or self.grid()
        rho0 = make_profile(self.preset, grid.centers, seed=self.seed, **self.preset_params)
        return build_initial_data(rho0, self.psi, self.u_inf, self.z_inf, grid)

    def velocity(self, initial):
        u_min, u_max = initial.u_range
        return velocity_law(self.law, u_min=u_min, u_max=u_max, **self.law_params)

    def checkpoint_times(self):
        return tuple(self.checkpoints) or tuple(np.linspace(0, self.t_end, 11)[1:])


def from_sections(sections, name="scenario", path=None):
    r = _Reader(sections, path)
    cfg = ScenarioConfig(
        name=name,
        x_lo=r.float("domain", "x_lo"),
        x_hi=r.float("domain", "x_hi"),
        n_cells=r.int("domain", "n_cells"),
        t_end=r.float("time", "t_end"),
        cfl=r.float("time", "cfl", 0.5),
        kernel_kind=r.str("kernel", "kind", "exponential"),
        epsilons=r.floats("kernel", "epsilon", (0.1,)),
        table_x=r.floats("kernel", "table_x"),
        table_values=r.floats("kernel", "table_values"),
        law=r.str("velocity", "law", "greenshields"),
        law_params=r.params("velocity", {"law"}),
        preset=r.str("initial", "preset", "bump"),
        preset_params=r.params("initial", {"preset", "u_inf", "z_inf", "psi", "seed"}),
        u_inf=r.float("initial", "u_inf", 1.0),
        z_inf=r.float("initial", "z_inf", 0.0),
        psi=r.float("initial", "psi", 0.0),
        seed=r.int("initial", "seed", 0),
        scheme=r.str("run", "scheme", "eulerian"),
        blowup_ceiling=r.float("run", "blowup_ceiling", 10.0),
        window=r.float("run", "window"),
        max_iters=r.int("run", "max_iters", 20),
        q_tol=r.float("run", "q_tol", 1e-6),
        sweep_epsilons=r.floats("sweep", "epsilons", ()),
        n_list=r.ints("sweep", "n_list", ()),
        t_eval=r.float("sweep", "t_eval"),
        out_dir=r.str("output", "dir"),
        formats=r.words("output", "formats", ("csv", "json", "gp")),
        accept={k: v for k, (v, _) in sections.get("accept", {}).items()},
        sections=sections,
        path=path,
    )
    n_ck = r.int("time", "n_checkpoints", 10)
    cks = r.floats("time", "checkpoints", ())
    if not cks:
        cks = tuple(float(t) for t in np.linspace(0.0, cfg.t_end, n_ck + 1)[1:])
    cfg.checkpoints = tuple(sorted(cks))

    def bad(sec, key, msg):
        raise ConfigError(f"[{sec}] {key}: {msg}", r.line(sec, key), path)

    if not cfg.x_lo < cfg.x_hi:
        bad("domain", "x_hi", "need x_lo < x_hi")
    if cfg.n_cells < 16:
        bad("domain", "n_cells", "need n_cells >= 16")
    if not cfg.t_end > 0:
        bad("time", "t_end", "need t_end > 0")
    if not 0 < cfg.cfl <= 1:
        bad("time", "cfl", "need 0 < cfl <= 1")
    if not cfg.epsilons or min(cfg.epsilons) <= 0:
        bad("kernel", "epsilon", "need epsilon > 0")
    if cfg.sweep_epsilons and min(cfg.sweep_epsilons) <= 0:
        bad("sweep", "epsilons", "need epsilon > 0")
    if cfg.kernel_kind not in ("exponential", "tabulated"):
        bad("kernel", "kind", "expected 'exponential' or 'tabulated'")
    if cfg.kernel_kind == "tabulated" and (cfg.table_x is None or cfg.table_values is None):
        bad("kernel", "kind", "tabulated kernel needs table_x and table_values")
    if cfg.scheme not in SCHEMES:
        bad("run", "scheme", f"expected one of {', '.join(SCHEMES)}")
    if any(t <= 0 or t > cfg.t_end for t in cfg.checkpoints):
        bad("time", "checkpoints", "checkpoints must lie in (0, t_end]")
    return cfg


def load_scenario(path, overrides=()):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}", None, str(path)) from None
    sections = apply_overrides(parse_text(text, str(path)), overrides)
    return from_sections(sections, name=path.stem, path=str(path))


def load_text(text, name="scenario", overrides=()):
    return from_sections(apply_overrides(parse_text(text), overrides), name=name)


def shipped_scenarios():
    root = resources.files("nlgarz") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def shipped_path(name):
    """Filesystem path of a scenario shipped with the package."""
    return Path(str(resources.files("nlgarz") / "scenarios" / f"{name}.ini"))


def load_shipped(name, overrides=()):
    return load_scenario(shipped_path(name), overrides)
