"""Toy REINFORCE loop over a synthetic population with pluggable baselines."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .env import PromptPopulation, softmax, stream
from .estimators import EstimatorSpec, RewardBatch, baseline_oracle, compute_advantages
from .offline_values import ValueTable


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 64
    learning_rate: float = 0.1
    estimator: EstimatorSpec = field(default_factory=lambda: EstimatorSpec("basis", "unb"))
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class TrainTrace:
    initial_mean_true_value: float
    # one entry per step; mean_true_value is NaN on steps without an evaluation
    steps: np.ndarray
    mean_true_value: np.ndarray
    selected_beta: np.ndarray
    grad_var: np.ndarray
    final_population: PromptPopulation

    @property
    def evaluated(self) -> np.ndarray:
        return self.mean_true_value[~np.isnan(self.mean_true_value)]

    @property
    def final_value(self) -> float:
        return float(self.evaluated[-1])

    def is_collapsing(self, tolerance: float = 0.9) -> bool:
        """True if the final value fell below ``tolerance`` times the running max."""
        vals = np.concatenate([[self.initial_mean_true_value], self.evaluated])
        return bool(vals[-1] < tolerance * vals.max())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "mean_true_value", "selected_beta", "grad_var"])
            for s, v, b, g in zip(self.steps, self.mean_true_value, self.selected_beta, self.grad_var):
                w.writerow([int(s), _cell(v), _cell(b), _cell(g)])


def _cell(x) -> str:
    return "" if np.isnan(x) else repr(float(x))


def policy_scores(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Gradient of ``log softmax(logits)[a]`` w.r.t. the logits: ``onehot(a) - softmax``.

    ``logits`` is (B, K), ``actions`` is (B, G); returns (B, G, K).
    """
    probs = softmax(logits)
    onehot = np.zeros(actions.shape + (logits.shape[1],))
    np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
    return onehot - probs[:, None, :]


def policy_gradient_step(pop: PromptPopulation, prompt_ids, actions, advantages, learning_rate: float) -> PromptPopulation:
    """Return a new population after one REINFORCE ascent step.

    Each sampled prompt moves by ``lr * mean_g(A_g * (onehot(a_g) - softmax))``;
    prompts outside the batch are untouched.
    """
    ids = np.asarray(prompt_ids, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64).reshape(ids.size, -1)
    advantages = np.asarray(advantages, dtype=np.float64).reshape(ids.size, -1)
    logits = np.array(pop.logits)
    kernels.policy_update(logits, ids, actions, advantages, learning_rate)
    return pop.with_logits(logits)


def _batch_grad_var(pop: PromptPopulation, ids, actions, advantages) -> float:
    # trace of the empirical covariance of the per-sample gradient contributions
    contrib = advantages[..., None] * policy_scores(pop.logits[ids], actions)
    flat = contrib.reshape(-1, contrib.shape[-1])
    if flat.shape[0] < 2:
        return float("nan")
    return float(flat.var(axis=0, ddof=1).sum())


def train(pop: PromptPopulation, table: ValueTable | None, config: TrainConfig) -> TrainTrace:
    """Run ``config.steps`` sample / estimate / update iterations.

    ``table`` must come from ``pop``'s initial policy and is never rebuilt.
    """
    spec = config.estimator
    if spec.family == "basis":
        if table is None:
            raise ValueError("basis training needs a value table")
        table.check_covers(np.arange(len(pop)))
    if len(pop) < config.batch_size:
        raise ValueError(f"population of {len(pop)} is smaller than batch size {config.batch_size}")
    n = config.steps
    mean_val = np.full(n, np.nan)
    betas = np.full(n, np.nan)
    gvar = np.full(n, np.nan)
    initial = float(pop.values().mean())
    for t in range(n):
        rng = stream(config.seed, t)
        ids = np.sort(rng.choice(len(pop), size=config.batch_size, replace=False))
        actions, rewards = pop.sample(ids, spec.G, rng)
        adv = compute_advantages(spec, RewardBatch(ids, rewards), table)
        if adv.selected_beta is not None:
            betas[t] = adv.selected_beta
        gvar[t] = _batch_grad_var(pop, ids, actions, adv.advantages)
        pop = policy_gradient_step(pop, ids, actions, adv.advantages, config.learning_rate)
        if (t + 1) % config.eval_every == 0 or t == n - 1:
            mean_val[t] = float(pop.values().mean())
    return TrainTrace(initial, np.arange(1, n + 1), mean_val, betas, gvar, pop)


@dataclass
class VarianceProbe:
    per_prompt: np.ndarray
    aggregate: float
    mean_gradient: np.ndarray
    stderr: np.ndarray
    # (n_draws, N, K) per-draw contributions, only when requested
    draws: np.ndarray | None = None


def gradient_variance_probe(pop: PromptPopulation, table: ValueTable | None, estimator, n_draws: int = 1000,
                            seed: int = 0, keep_draws: bool = False, chunk: int = 2048) -> VarianceProbe:
    """Monte-Carlo variance of the single-sample gradient contribution, policy held fixed.

    Every draw uses the whole population as one batch with a single rollout
    per prompt (``estimator.G`` rollouts for group families). ``estimator``
    may also be the string ``"oracle"`` for the exact-value baseline.
    Per-prompt variance is the trace of the covariance over draws. Draws with
    equal ``seed`` share their rollouts across estimators of equal G.
    """
    if n_draws < 1000:
        raise ValueError("n_draws must be >= 1000")
    ids = np.arange(len(pop))
    truth = pop.values()
    probs = softmax(pop.logits)
    cdf = np.cumsum(probs, axis=1)
    G = 1 if estimator == "oracle" else estimator.G
    rng = stream(seed, 7)
    total = np.zeros((len(pop), pop.K))
    total_sq = np.zeros((len(pop), pop.K))
    kept = np.empty((n_draws, len(pop), pop.K)) if keep_draws else None
    done = 0
    while done < n_draws:
        c = min(chunk, n_draws - done)
        u = rng.random((c, len(pop), G))
        actions = np.minimum((u[..., None] >= cdf[None, :, None, :]).sum(axis=-1), pop.K - 1)
        rewards = (actions == pop.correct[None, :, None]).astype(np.float64)
        adv = np.empty_like(rewards)
        for d in range(c):
            batch = RewardBatch(ids, rewards[d])
            if estimator == "oracle":
                adv[d] = baseline_oracle(batch, truth).advantages
            else:
                adv[d] = compute_advantages(estimator, batch, table).advantages
        onehot = np.zeros(actions.shape + (pop.K,))
        np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
        contrib = (adv[..., None] * (onehot - probs[None, :, None, :])).mean(axis=2)
        total += contrib.sum(axis=0)
        total_sq += (contrib**2).sum(axis=0)
        if keep_draws:
            kept[done : done + c] = contrib
        done += c
    mean = total / n_draws
    var = np.maximum(total_sq / n_draws - mean**2, 0.0) * n_draws / (n_draws - 1)
    per_prompt = var.sum(axis=1)
    return VarianceProbe(per_prompt, float(per_prompt.mean()), mean, np.sqrt(var / n_draws), kept)
