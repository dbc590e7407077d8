"""Rare-event estimation of STL rule violations with adaptive multilevel splitting."""

from .estimators import (
    AMSEstimator,
    CrossEntropyEstimator,
    Estimate,
    ImportanceSamplingEstimator,
    MonteCarloEstimator,
    ams_estimate,
    ce_estimate,
    is_fixed_estimate,
    mc_estimate,
)
from .monitor import RobustnessMonitor, WorkList, batch_robustness
from .sim_core import NoiseStream, ProposalParams, ToyWalkScenario, Trajectory
from .stl import STLSyntaxError, format_formula, parse_formula

__version__ = "0.1.0"

__all__ = [
    "AMSEstimator",
    "CrossEntropyEstimator",
    "Estimate",
    "ImportanceSamplingEstimator",
    "MonteCarloEstimator",
    "NoiseStream",
    "ProposalParams",
    "RobustnessMonitor",
    "STLSyntaxError",
    "ToyWalkScenario",
    "Trajectory",
    "WorkList",
    "ams_estimate",
    "batch_robustness",
    "ce_estimate",
    "format_formula",
    "is_fixed_estimate",
    "mc_estimate",
    "parse_formula",
]
