"""Numerical laboratory for the n-species delayed periodic chemostat."""

__version__ = "0.1.0"

from .model import (
    ChemostatModel,
    PeriodicFn,
    QuadratureGrid,
    ResponseFn,
    Species,
    integrate_d,
    periodic_min_max,
    validate_model,
)
from .conditions import check_all, check_exclusion, check_existence, check_extinction, estimate_persistence
from .config import ConfigError, load, loads
from .periodic import SolveOptions, cone_params, find_fixed_point, poincare_shoot
from .report import ConditionReport, Entry
from .simulator import History, IntegrationError, simulate, simulate_linear_comparison
from .washout import WashoutSolution, washout_initial, washout_solution

__all__ = [
    "ConfigError",
    "History",
    "IntegrationError",
    "SolveOptions",
    "check_all",
    "check_exclusion",
    "check_existence",
    "check_extinction",
    "cone_params",
    "estimate_persistence",
    "find_fixed_point",
    "load",
    "loads",
    "poincare_shoot",
    "simulate",
    "simulate_linear_comparison",
    "ChemostatModel",
    "ConditionReport",
    "Entry",
    "PeriodicFn",
    "QuadratureGrid",
    "ResponseFn",
    "Species",
    "WashoutSolution",
    "integrate_d",
    "periodic_min_max",
    "validate_model",
    "washout_initial",
    "washout_solution",
]
