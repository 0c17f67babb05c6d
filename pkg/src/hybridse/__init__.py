"""Hybrid AC/DC distribution grid simulation and distributed robust state estimation."""

from . import bench, coordination, data, estimation, grid, injection, measmodel, powerflow, telemetry

__all__ = ["bench", "coordination", "data", "estimation", "grid", "injection",
           "measmodel", "powerflow", "telemetry"]
__version__ = "0.1.0"
