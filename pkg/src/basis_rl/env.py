"""Prompt-as-bandit environment with exact values.

Each prompt is a categorical softmax policy over ``K`` candidate answers, one
of which is correct; the reward is 1 iff the correct answer is sampled. The
value of a prompt is therefore ``softmax(logits)[correct_index]``, available
in closed form.

Randomness comes from numpy ``Generator`` objects over PCG64. Callers pass
generators explicitly; seeds are expanded with ``SeedSequence`` so that
independent streams (per repeat, per trial, per step) can be spawned
deterministically, see :func:`stream`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """A PCG64 generator for ``seed`` and an optional integer spawn key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PromptState:
    prompt_id: int
    logits: np.ndarray
    correct_index: int

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        if logits.ndim != 1 or logits.size < 2:
            raise ValueError("logits must be a vector with at least 2 entries")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if not 0 <= self.correct_index < logits.size:
            raise ValueError(f"correct_index {self.correct_index} outside [0, {logits.size})")
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def K(self) -> int:
        return self.logits.size


@dataclass(frozen=True)
class RewardSample:
    prompt_id: int
    action: int
    reward: int


def true_value(p: PromptState) -> float:
    return float(softmax(p.logits)[p.correct_index])


def sample_rollout(p: PromptState, rng: np.random.Generator) -> RewardSample:
    cdf = np.cumsum(softmax(p.logits))
    action = min(int(np.searchsorted(cdf, rng.random(), side="right")), p.K - 1)
    return RewardSample(p.prompt_id, action, int(action == p.correct_index))


class PromptPopulation:
    """An immutable ordered set of prompts stored as one ``(N, K)`` logit table.

    Prompt ids are the row indices ``0..N-1``.
    """

    def __init__(self, logits, correct, rng_seed: int = 0):
        logits = np.array(logits, dtype=np.float64)
        correct = np.array(correct, dtype=np.int64)
        if logits.ndim != 2 or logits.shape[1] < 2:
            raise ValueError("logits must have shape (N, K) with K >= 2")
        if correct.shape != (logits.shape[0],):
            raise ValueError("need one correct index per prompt")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if np.any(correct < 0) or np.any(correct >= logits.shape[1]):
            raise ValueError("correct indices out of range")
        logits.flags.writeable = False
        correct.flags.writeable = False
        self.logits = logits
        self.correct = correct
        self.rng_seed = int(rng_seed)

    def __len__(self):
        return self.logits.shape[0]

    def __getitem__(self, prompt_id: int) -> PromptState:
        return PromptState(int(prompt_id), self.logits[prompt_id], int(self.correct[prompt_id]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def K(self) -> int:
        return self.logits.shape[1]

    @property
    def prompts(self) -> list[PromptState]:
        return list(self)

    @classmethod
    def from_prompts(cls, prompts, rng_seed: int = 0) -> "PromptPopulation":
        prompts = list(prompts)
        ids = [p.prompt_id for p in prompts]
        if ids != list(range(len(prompts))):
            raise ValueError("prompt ids must be unique and contiguous from 0, in order")
        return cls([p.logits for p in prompts], [p.correct_index for p in prompts], rng_seed)

    def values(self) -> np.ndarray:
        """Exact value of every prompt."""
        return softmax(self.logits)[np.arange(len(self)), self.correct]

    def with_logits(self, logits) -> "PromptPopulation":
        return PromptPopulation(logits, self.correct, self.rng_seed)

    def sample(self, prompt_ids, G: int, rng: np.random.Generator):
        """Draw ``G`` rollouts for each listed prompt.

        Returns ``(actions, rewards)``, both of shape ``(len(prompt_ids), G)``.
        """
        ids = np.asarray(prompt_ids, dtype=np.int64)
        cdf = np.cumsum(softmax(self.logits[ids]), axis=1)
        u = rng.random((ids.size, G))
        actions = (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)
        actions = np.minimum(actions, self.K - 1)
        rewards = (actions == self.correct[ids][:, None]).astype(np.float64)
        return actions, rewards

    def to_json(self) -> list[dict]:
        return [
            {"prompt_id": i, "logits": [float(x) for x in self.logits[i]], "correct_index": int(self.correct[i])}
            for i in range(len(self))
        ]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path, rng_seed: int = 0) -> "PromptPopulation":
        records = json.loads(Path(path).read_text())
        prompts = [PromptState(r["prompt_id"], r["logits"], r["correct_index"]) for r in records]
        return cls.from_prompts(sorted(prompts, key=lambda p: p.prompt_id), rng_seed)


def monte_carlo_values(pop: PromptPopulation, n: int, rng: np.random.Generator, prompt_ids=None) -> np.ndarray:
    """Monte-Carlo value estimates from ``n`` rollouts per prompt."""
    ids = np.arange(len(pop)) if prompt_ids is None else np.asarray(prompt_ids)
    _, rewards = pop.sample(ids, n, rng)
    return rewards.mean(axis=1)


def tilt_population(pop: PromptPopulation, beta: float) -> PromptPopulation:
    """The KL-tilted policy ``pi_ref * exp(r / beta) / Z`` for every prompt.

    With a single correct answer the tilt adds ``1/beta`` to the correct logit,
    so each prompt's value becomes ``soft_value(value, beta)``.
    """
    logits = np.array(pop.logits)
    logits[np.arange(len(pop)), pop.correct] += 1.0 / beta
    return pop.with_logits(logits)


# ---------------------------------------------------------------------------
# value distributions


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0.0 < self.lo <= self.hi < 1.0:
            raise ValueError(f"uniform support [{self.lo}, {self.hi}] must lie strictly inside (0, 1)")

    def draw(self, count, rng):
        return rng.uniform(self.lo, self.hi, size=count)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta shape parameters must be positive")

    def draw(self, count, rng):
        # the support is open but float draws can round onto the endpoints
        return np.clip(rng.beta(self.a, self.b, size=count), 1e-12, 1.0 - 1e-12)


@dataclass(frozen=True)
class TwoCluster:
    v1: float
    v2: float
    mix: float

    def __post_init__(self):
        for v in (self.v1, self.v2):
            if not 0.0 < v < 1.0:
                raise ValueError(f"cluster value {v} must lie strictly inside (0, 1)")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must be in [0, 1]")

    def draw(self, count, rng):
        return np.where(rng.random(count) < self.mix, self.v1, self.v2)


_DIST_NAMES = {"uniform": (Uniform, 2), "beta": (Beta, 2), "two-cluster": (TwoCluster, 3)}


def parse_distribution(text: str):
    """Parse ``uniform:lo,hi``, ``beta:a,b`` or ``two-cluster:v1,v2,mix``."""
    name, _, args = text.partition(":")
    name = name.strip().lower().replace("_", "-")
    if name not in _DIST_NAMES:
        raise ValueError(f"unknown distribution {name!r}; expected one of {sorted(_DIST_NAMES)}")
    cls, arity = _DIST_NAMES[name]
    try:
        params = [float(x) for x in args.split(",")] if args.strip() else []
    except ValueError:
        raise ValueError(f"bad parameters in distribution {text!r}") from None
    if len(params) != arity:
        raise ValueError(f"{name} takes {arity} parameters, got {len(params)}")
    return cls(*params)


def logits_for_values(values, K: int, correct) -> np.ndarray:
    """Single-hot logits whose softmax puts mass ``values[i]`` on ``correct[i]``."""
    values = np.asarray(values, dtype=np.float64)
    logits = np.zeros((values.size, K))
    logits[np.arange(values.size), correct] = np.log(values * (K - 1) / (1.0 - values))
    return logits


def make_population(count: int, value_distribution, K: int, seed: int) -> PromptPopulation:
    if count < 1:
        raise ValueError("count must be positive")
    if K < 2:
        raise ValueError("K must be at least 2")
    if isinstance(value_distribution, str):
        value_distribution = parse_distribution(value_distribution)
    rng = stream(seed)
    values = value_distribution.draw(count, rng)
    correct = rng.integers(0, K, size=count)
    return PromptPopulation(logits_for_values(values, K, correct), correct, seed)

