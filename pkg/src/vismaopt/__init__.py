"""Islanded-microgrid transient simulator with a virtual synchronous
machine, plus a parallel-tempering tuner for its four control parameters."""

__version__ = "0.1.0"

from .devices import InverterParams, SystemState, VismaParams
from .metrics import CostWeights, TransientMetrics
from .network import NetworkConfig, droop_coefficients
from .scenario import load_paper_scenario
from .sim import ScenarioConfig, Trajectory

__all__ = [
    "InverterParams", "SystemState", "VismaParams", "CostWeights",
    "TransientMetrics", "NetworkConfig", "droop_coefficients",
    "load_paper_scenario", "ScenarioConfig", "Trajectory", "__version__",
]
