"""Seedable simulator and coordination library for drone-swarm spatio-temporal sensing."""

from .energy import DroneSpec, forward_power, hover_power, plan_energy
from .scenario import GridMap, ScenarioWorld, TimeStructure

__all__ = [
    "DroneSpec",
    "GridMap",
    "ScenarioWorld",
    "TimeStructure",
    "forward_power",
    "hover_power",
    "plan_energy",
]
__version__ = "0.1.0"
