"""Cluster runtime: per-node event loops, deployment modes, scenarios."""

from .scenario import DeploymentMode, Scenario, Stimulus, load_scenario, scenario_from_dict
from .transcript import Transcript, verify_transcript
from .core import ActionOutcome, ClusterRuntime, RunResult, run_scenario

__all__ = [
    "ActionOutcome",
    "ClusterRuntime",
    "DeploymentMode",
    "RunResult",
    "Scenario",
    "Stimulus",
    "Transcript",
    "load_scenario",
    "run_scenario",
    "scenario_from_dict",
    "verify_transcript",
]
