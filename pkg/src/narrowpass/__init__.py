"""Narrow-road meeting planner and scenario simulator."""

from .config import GapCostWeights, PlannerConfig, SimConfig
from .scene import (
    ExpandedBoundary,
    Pose,
    RoadModel,
    StationaryVehicle,
    VehicleShape,
    build_boundary,
)

__all__ = [
    "GapCostWeights",
    "PlannerConfig",
    "SimConfig",
    "ExpandedBoundary",
    "Pose",
    "RoadModel",
    "StationaryVehicle",
    "VehicleShape",
    "build_boundary",
]

__version__ = "0.1.0"
