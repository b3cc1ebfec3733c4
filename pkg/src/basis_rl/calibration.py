"""Per-step selection of the tilt beta and the full single-rollout BASIS step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .estimators import DEFAULT_EPSILON, AdvantageBatch, RewardBatch, _require_basis_batch, _result, basis_advantages
from .offline_values import ValueTable

NO_CALIBRATION = -1
DEFAULT_MIN_ACTIVE_FRACTION = 0.9


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the grid search.

    ``beta_index`` is ``NO_CALIBRATION`` (and ``beta`` is None) when no grid
    point had at least two active prompts. ``objective_curve`` is NaN at
    excluded grid points.
    """

    beta_index: int
    beta: float | None
    objective_curve: np.ndarray
    active_count_per_beta: np.ndarray

    @property
    def calibrated(self) -> bool:
        return self.beta_index != NO_CALIBRATION

    @property
    def objective(self) -> float:
        return float(self.objective_curve[self.beta_index]) if self.calibrated else float("nan")

    def to_json(self) -> dict:
        return {
            "beta": self.beta,
            "beta_index": self.beta_index,
            "objective_curve": [None if np.isnan(x) else float(x) for x in self.objective_curve],
            "active_counts": [int(c) for c in self.active_count_per_beta],
        }


def objective_curve(rewards, baselines, active, min_active_fraction=DEFAULT_MIN_ACTIVE_FRACTION):
    """Mean squared residual over the active set for every grid row.

    Returns ``(curve, counts)``. Rows with fewer than two active prompts, or
    fewer than ``min_active_fraction`` times the largest active count on the
    grid, are NaN: at small beta the active set shrinks to the hardest
    prompts, whose residuals are small for reasons unrelated to fit.
    """
    counts = active.sum(axis=1)
    sq = np.where(active, (rewards[None, :] - baselines) ** 2, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        curve = sq.sum(axis=1) / counts
    floor = max(2.0, min_active_fraction * counts.max(initial=0))
    curve[counts < floor] = np.nan
    return curve, counts


def select_beta(
    batch: RewardBatch,
    table: ValueTable,
    variant: str = "unb",
    epsilon: float = DEFAULT_EPSILON,
    min_active_fraction: float = DEFAULT_MIN_ACTIVE_FRACTION,
) -> CalibrationResult:
    """Pick the grid beta whose refined baselines best predict this batch's rewards.

    Ties go to the smallest beta.
    """
    _require_basis_batch(batch, table)
    grid = table.grid.values
    rewards = batch.rewards[:, 0]
    baselines, active = kernels.baseline_grid(
        table.p_hat[batch.prompt_ids], rewards, grid, epsilon, kernels.VARIANT_CODES[variant]
    )
    curve, counts = objective_curve(rewards, baselines, active, min_active_fraction)
    if np.all(np.isnan(curve)):
        return CalibrationResult(NO_CALIBRATION, None, curve, counts)
    idx = int(np.nanargmin(curve))
    return CalibrationResult(idx, float(grid[idx]), curve, counts)


def basis_step(
    batch: RewardBatch,
    table: ValueTable,
    variant: str = "unb",
    epsilon: float = DEFAULT_EPSILON,
    min_active_fraction: float = DEFAULT_MIN_ACTIVE_FRACTION,
) -> AdvantageBatch:
    """Calibrate beta on the batch, then compute baselines at the selected beta."""
    cal = select_beta(batch, table, variant, epsilon, min_active_fraction)
    if not cal.calibrated:
        out = _result(batch, 0.0, active=np.zeros(batch.B, dtype=bool))
    else:
        out = basis_advantages(batch, table, cal.beta, variant, epsilon)
    out.meta["calibration"] = cal
    return out
