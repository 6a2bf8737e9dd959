"""Priority-aware distributed MPC for multi-zone building climate control."""

from .mpc import PlanError
from .scenario import ConfigError, Scenario, load_scenario
from .sim import SimulationResult, pareto_sweep, run_closed_loop

__all__ = [
    "ConfigError",
    "PlanError",
    "Scenario",
    "SimulationResult",
    "load_scenario",
    "pareto_sweep",
    "run_closed_loop",
]

__version__ = "0.1.0"
