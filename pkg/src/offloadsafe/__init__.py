"""Simulator for offloading driving functions to an edge server, with runtime safety checks.

The vehicle hands object tracking, environment modelling and trajectory
planning to a remote node when offered, watches the quality of the returned
streams and validates remote results before use. Attacks against the remote
services show what the checks catch.
"""

from .harness import RunReport, RunResult, Simulation, run_scenario
from .report import aggregate_reports, report_csv, summary_table
from .scenario import ConfigError, ScenarioConfig, config_from_dict, load_scenario

__all__ = [
    "ConfigError",
    "RunReport",
    "RunResult",
    "ScenarioConfig",
    "Simulation",
    "aggregate_reports",
    "config_from_dict",
    "load_scenario",
    "report_csv",
    "run_scenario",
    "summary_table",
]

__version__ = "0.1.0"
