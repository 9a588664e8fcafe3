"""Deterministic simulation of the tower system and its demo components."""

from .components import CwpClient, FplOwner, LegacyAgent, QnhSource, RecoveryComponent
from .convergence import ConvergenceReport, assert_converged, check_convergence, rejection_completeness
from .event_log import EventLog, LogRecord
from .flight_plans import (
    FlightPlan,
    FlightStatus,
    FplState,
    QnhState,
    Replica,
    cwp_apply,
    fpl_owner_apply,
    legacy_agent_translate,
    qnh_source_tick,
    reference_reduce,
)
from .network import Link, LinkModel, Simulator, SimTransport
from .scenario import ScenarioAction, ScenarioScript, load_scenario, parse_scenario, random_scenario
from .world import SimWorld, WorldConfig, build_world, load_world_config, run_scenario

__all__ = [
    "CwpClient",
    "FplOwner",
    "LegacyAgent",
    "QnhSource",
    "RecoveryComponent",
    "ConvergenceReport",
    "assert_converged",
    "check_convergence",
    "rejection_completeness",
    "EventLog",
    "LogRecord",
    "FlightPlan",
    "FlightStatus",
    "FplState",
    "QnhState",
    "Replica",
    "cwp_apply",
    "fpl_owner_apply",
    "legacy_agent_translate",
    "qnh_source_tick",
    "reference_reduce",
    "Link",
    "LinkModel",
    "Simulator",
    "SimTransport",
    "ScenarioAction",
    "ScenarioScript",
    "load_scenario",
    "parse_scenario",
    "random_scenario",
    "SimWorld",
    "WorldConfig",
    "build_world",
    "load_world_config",
    "run_scenario",
]
