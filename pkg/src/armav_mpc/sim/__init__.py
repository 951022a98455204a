"""Simulation harness: truth model, gait, scenarios and metrics."""

from .gait import GaitSchedule, foothold
from .metrics import RunMetrics, Telemetry, metrics
from .scenario import (
    CompareReport,
    ScenarioConfig,
    ScenarioResult,
    builtin_scenarios,
    get_scenario,
    paired_compare,
    run_scenario,
)
from .world import SimWorld, physics_step

__all__ = [
    "GaitSchedule",
    "foothold",
    "RunMetrics",
    "Telemetry",
    "metrics",
    "CompareReport",
    "ScenarioConfig",
    "ScenarioResult",
    "builtin_scenarios",
    "get_scenario",
    "paired_compare",
    "run_scenario",
    "SimWorld",
    "physics_step",
]
