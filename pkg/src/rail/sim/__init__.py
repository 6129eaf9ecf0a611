"""Deterministic end-to-end testbed: synthetic policy, simulated robot,
latency models, virtual-clock scenario runner, smoothness metrics."""

from .latency import Delay, LatencyModel
from .metrics import SmoothnessReport, discontinuity_report, settle_time, smoothness_report
from .policy import ReferenceGenerator, SyntheticPolicy
from .robot import SimulatedRobot
from .scenario import ScenarioConfig, run_scenario
from .trace import RunTrace, TraceEvent

__all__ = [
    "Delay",
    "LatencyModel",
    "ReferenceGenerator",
    "RunTrace",
    "ScenarioConfig",
    "SimulatedRobot",
    "SmoothnessReport",
    "SyntheticPolicy",
    "TraceEvent",
    "discontinuity_report",
    "run_scenario",
    "settle_time",
    "smoothness_report",
]
