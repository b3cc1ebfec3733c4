"""Batchwise single-rollout baselines for policy-gradient RL with binary rewards."""

__version__ = "0.1.0"

from .calibration import CalibrationResult, basis_step, select_beta
from .diagnostics import DiagnosticsConfig, DiagnosticsReport, run_protocol
from .env import PromptPopulation, PromptState, make_population, parse_distribution
from .estimators import AdvantageBatch, EstimatorSpec, RewardBatch, compute_advantages
from .offline_values import BetaGrid, ValueTable, build_table, soft_value
from .trainer import TrainConfig, TrainTrace, train

__all__ = [
    "AdvantageBatch",
    "BetaGrid",
    "CalibrationResult",
    "DiagnosticsConfig",
    "DiagnosticsReport",
    "EstimatorSpec",
    "PromptPopulation",
    "PromptState",
    "RewardBatch",
    "TrainConfig",
    "TrainTrace",
    "ValueTable",
    "basis_step",
    "build_table",
    "compute_advantages",
    "make_population",
    "parse_distribution",
    "run_protocol",
    "select_beta",
    "soft_value",
    "train",
]
