"""Builtin three-lane lane-change scenario."""

from .config import (
    ControllerConfig,
    CostWeights,
    Maneuver,
    PemParams,
    RoadConfig,
    RuleConstants,
    ScenarioConfig,
    TrackerConfig,
    VehicleSpec,
)
from .rules import RULE_TITLES, RULES, rule_formula
from .scenario import LaneChangeScenario, LaneChangeSimulator, collided

__all__ = [
    "ControllerConfig",
    "CostWeights",
    "LaneChangeScenario",
    "LaneChangeSimulator",
    "Maneuver",
    "PemParams",
    "RULES",
    "RULE_TITLES",
    "RoadConfig",
    "RuleConstants",
    "ScenarioConfig",
    "TrackerConfig",
    "VehicleSpec",
    "collided",
    "rule_formula",
]
