"""Stochastic block race between an attacker and the genuine network, and the
defender's alliance decision game built on top of it."""

__version__ = "0.1.0"

from .core import (
    ArrivalModel,
    BlockRace,
    ConvergenceError,
    DomainError,
    FirstPassageResult,
    GeometricLaw,
    NetworkParams,
    ObservationModel,
    PointMass,
    first_passage,
    race_first_passage,
)
from .decision import AllianceConfig, DecisionEngine, DecisionReport, sigma_eta
from .game import CostModel, SweepSpec, optimize_eta, strategy_costs, total_cost

__all__ = [
    "ArrivalModel",
    "BlockRace",
    "ConvergenceError",
    "DomainError",
    "FirstPassageResult",
    "GeometricLaw",
    "NetworkParams",
    "ObservationModel",
    "PointMass",
    "first_passage",
    "race_first_passage",
    "AllianceConfig",
    "DecisionEngine",
    "DecisionReport",
    "sigma_eta",
    "CostModel",
    "SweepSpec",
    "optimize_eta",
    "strategy_costs",
    "total_cost",
]
