"""Baseline and advantage estimators.

Families: ``zero`` (vanilla REINFORCE), ``grpo`` (group mean), ``rloo``
(leave-one-out group mean), ``reinforcepp`` (batch mean) and ``basis``
(single-rollout batchwise borrowing with UNB / VOP / RVG weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .offline_values import ValueTable

FAMILIES = ("zero", "grpo", "rloo", "reinforcepp", "basis")
VARIANTS = ("unb", "vop", "rvg")
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class EstimatorSpec:
    family: str
    variant: str | None = None
    G: int = 1
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.G < 1:
            raise ValueError("G must be >= 1")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        if self.family == "basis":
            variant = self.variant or "unb"
            if variant not in VARIANTS:
                raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
            object.__setattr__(self, "variant", variant)
            if self.G != 1:
                raise ValueError("basis uses a single rollout per prompt (G = 1)")
        elif self.variant is not None:
            raise ValueError("variant only applies to the basis family")
        if self.family == "rloo" and self.G < 2:
            raise ValueError("rloo needs G >= 2")

    @property
    def label(self) -> str:
        name = f"basis-{self.variant}" if self.family == "basis" else self.family
        return f"{name}/G={self.G}"


@dataclass(frozen=True)
class RewardBatch:
    prompt_ids: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        ids = np.array(self.prompt_ids, dtype=np.int64)
        r = np.array(self.rewards, dtype=np.float64)
        if r.ndim == 1:
            r = r[:, None]
        if r.ndim != 2 or r.shape[0] != ids.size:
            raise ValueError("rewards must have shape (B, G) matching prompt_ids")
        if ids.size < 2:
            raise ValueError("a batch needs at least 2 prompts")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        ids.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "prompt_ids", ids)
        object.__setattr__(self, "rewards", r)

    @property
    def B(self) -> int:
        return self.rewards.shape[0]

    @property
    def G(self) -> int:
        return self.rewards.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.rewards == 0) | (self.rewards == 1)))


@dataclass
class AdvantageBatch:
    baselines: np.ndarray
    advantages: np.ndarray
    active: np.ndarray | None = None
    selected_beta: float | None = None
    weight_row_sums: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _result(batch: RewardBatch, baselines, **kw) -> AdvantageBatch:
    baselines = np.broadcast_to(np.asarray(baselines, dtype=np.float64), batch.rewards.shape).copy()
    return AdvantageBatch(baselines, batch.rewards - baselines, **kw)


def baseline_zero(batch: RewardBatch) -> AdvantageBatch:
    return _result(batch, 0.0)


def baseline_grpo(batch: RewardBatch) -> AdvantageBatch:
    return _result(batch, batch.rewards.mean(axis=1, keepdims=True))


def baseline_rloo(batch: RewardBatch) -> AdvantageBatch:
    G = batch.G
    if G < 2:
        raise ValueError("rloo needs at least 2 rollouts per prompt")
    r = batch.rewards
    return _result(batch, (r.sum(axis=1, keepdims=True) - r) / (G - 1))


def baseline_reinforcepp(batch: RewardBatch) -> AdvantageBatch:
    return _result(batch, batch.rewards.mean())


def baseline_oracle(batch: RewardBatch, values) -> AdvantageBatch:
    """Subtract known per-prompt values; used as a variance reference."""
    return _result(batch, np.asarray(values, dtype=np.float64)[:, None])


def active_set(values, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return (v > epsilon) & (v < 1.0 - epsilon)


def _check_weight_inputs(values, target):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("need at least 2 active prompts; fall back to the zero baseline")
    if np.any((v <= 0) | (v >= 1)):
        raise ValueError("values must lie strictly inside (0, 1)")
    if not 0 <= target < v.size:
        raise IndexError("target outside the value vector")
    return v


def basis_weights_unb(values, target: int) -> np.ndarray:
    """Unbiasedness-constrained minimum-variance weights for ``target``.

    Returns a full-length vector with a zero at ``target``. Uses the
    Bernoulli plug-in ``sigma^2 = V (1 - V)``, so ``V_j / sigma_j^2 = 1 / (1 - V_j)``.
    """
    v = _check_weight_inputs(values, target)
    peers = np.arange(v.size) != target
    q = v / (1.0 - v)
    w = v[target] / (1.0 - v) / q[peers].sum()
    w[target] = 0.0
    return w


def basis_weights_vop(values, target: int) -> np.ndarray:
    """Unconstrained MSE-optimal weights; UNB weights scaled by ``D / (1 + D)``."""
    v = _check_weight_inputs(values, target)
    peers = np.arange(v.size) != target
    q = v / (1.0 - v)
    w = v[target] / (1.0 - v) / (1.0 + q[peers].sum())
    w[target] = 0.0
    return w


def basis_baseline_rvg(values, rewards, target: int) -> float:
    """Average of peers' reward-to-value ratios, rescaled by the target's value."""
    v = _check_weight_inputs(values, target)
    r = np.asarray(rewards, dtype=np.float64)
    peers = np.arange(v.size) != target
    return float(v[target] / (v.size - 1) * np.sum(r[peers] / v[peers]))


def _require_basis_batch(batch: RewardBatch, table: ValueTable):
    if batch.G != 1:
        raise ValueError("basis estimators take exactly one rollout per prompt")
    if not batch.is_binary:
        raise ValueError("basis estimators require binary rewards")
    table.check_covers(batch.prompt_ids)


def basis_advantages(
    batch: RewardBatch, table: ValueTable, beta: float, variant: str = "unb", epsilon: float = DEFAULT_EPSILON
) -> AdvantageBatch:
    """Batchwise baselines at a fixed tilt ``beta``.

    Inactive prompts get the zero baseline; if fewer than two prompts are
    active every prompt does.
    """
    _require_basis_batch(batch, table)
    values = table.values_at(batch.prompt_ids, beta)
    odds = table.odds_at(batch.prompt_ids, beta)
    active = active_set(values, epsilon)
    baselines, row_sums = kernels.refined_baselines(
        values, odds, batch.rewards[:, 0], active, kernels.VARIANT_CODES[variant]
    )
    return _result(
        batch,
        baselines[:, None],
        active=active,
        selected_beta=float(beta),
        weight_row_sums=row_sums,
        meta={"initial_values": values},
    )


def compute_advantages(spec: EstimatorSpec, batch: RewardBatch, table: ValueTable | None = None) -> AdvantageBatch:
    """Dispatch on ``spec.family``; basis runs the calibrated per-step pipeline."""
    if spec.family != "basis" and batch.G != spec.G:
        raise ValueError(f"{spec.label} expects G={spec.G}, batch has G={batch.G}")
    if spec.family == "zero":
        return baseline_zero(batch)
    if spec.family == "grpo":
        return baseline_grpo(batch)
    if spec.family == "rloo":
        return baseline_rloo(batch)
    if spec.family == "reinforcepp":
        return baseline_reinforcepp(batch)
    if table is None:
        raise ValueError("basis estimators need a value table")
    from .calibration import basis_step

    return basis_step(batch, table, spec.variant, spec.epsilon)
