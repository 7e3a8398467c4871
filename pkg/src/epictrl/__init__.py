"""Vaccination control of a multi-class SIRD epidemic model.

Modules
-------
model
    Parameters, state vectors and the plant right-hand side.
integrator
    Fixed-step and adaptive simulation with refined events.
control
    Linearizing and saturated vaccination laws and their constants.
observer
    High-gain observer driven by the death measurements.
analysis
    Run summaries and property checks.
"""

from ._jit import backend
from .control import DomainError, LinGains, SatConfig, select_gains
from .integrator import (Event, IntegrationError, PiecewiseConstant, StepSpec, Trajectory,
                         simulate, simulate_observer)
from .model import ModelParams, ParamValidationError, StateVec, validate_params
from .observer import ObserverConfig
from .scenario import Scenario, ScenarioError, bundled_path, load_scenario

__version__ = "0.1.0"

__all__ = [
    "DomainError", "Event", "IntegrationError", "LinGains", "ModelParams", "ObserverConfig",
    "ParamValidationError", "PiecewiseConstant", "SatConfig", "Scenario", "ScenarioError",
    "StateVec", "StepSpec", "Trajectory", "backend", "bundled_path", "load_scenario",
    "select_gains", "simulate", "simulate_observer", "validate_params", "__version__",
]
