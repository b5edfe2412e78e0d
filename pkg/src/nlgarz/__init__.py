"""Simulator and verification harness for the nonlocal Generalized Aw-Rascle-Zhang traffic model."""

from .config import ScenarioConfig, load_scenario, load_shipped, load_text, shipped_scenarios
from .convolution import compute_xi, exponential_scan
from .grid import Grid
from .model import (InitialData, Kernel, VelocityModel, build_initial_data, exponential_kernel,
                    tabulated_kernel, validate_kernel, validate_velocity, velocity_law)
from .solver_local import run_local, step_godunov
from .solver_nonlocal import GridState, ParticleEnsemble, run, run_picard, step_eulerian, step_lagrangian

__version__ = "0.1.0"
