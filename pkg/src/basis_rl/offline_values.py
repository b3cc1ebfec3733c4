"""Reference-policy value table and closed-form KL-tilted values.

The table stores, per prompt, the number of reference rollouts and their
empirical mean reward. Tilted values are evaluated on demand:

    V_beta = p * e^{1/beta} / (1 - p + p * e^{1/beta})

computed as ``1 / (1 + ((1 - p) / p) * e^{-1/beta})``, which never overflows
(the direct form overflows at beta = 0.01).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import PromptPopulation, stream
from .kernels import numpy_impl


@dataclass(frozen=True)
class BetaGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("grid must be a non-empty vector")
        if np.any(v <= 0):
            raise ValueError("grid values must be positive")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid must be strictly increasing")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __getitem__(self, index):
        return float(self.values[index])

    def index_of(self, beta: float) -> int:
        idx = int(np.argmin(np.abs(self.values - beta)))
        if not np.isclose(self.values[idx], beta, rtol=0, atol=1e-9):
            raise KeyError(f"beta {beta} is not on the grid")
        return idx

    @classmethod
    def default(cls) -> "BetaGrid":
        """230 points: 0.01..2.00 step 0.01, then 2.1..5.0 step 0.1."""
        fine = np.round(np.arange(1, 201) * 0.01, 2)
        coarse = np.round(2.0 + np.arange(1, 31) * 0.1, 1)
        return cls(np.concatenate([fine, coarse]))

    @classmethod
    def parse(cls, text: str) -> "BetaGrid":
        """``default``, a comma list ``0.1,0.5,1``, or ``start:stop:step`` segments joined by ``+``."""
        text = text.strip()
        if text == "default":
            return cls.default()
        if ":" not in text:
            return cls([float(x) for x in text.split(",")])
        parts = []
        for seg in text.split("+"):
            start, stop, step = (float(x) for x in seg.split(":"))
            n = int(round((stop - start) / step)) + 1
            parts.append(start + step * np.arange(n))
        return cls(np.round(np.concatenate(parts), 12))


def soft_value(p_hat, beta):
    """Value of the KL-tilted reference policy for a binary reward with mean ``p_hat``.

    Accepts scalars or arrays; fixed points 0 and 1 are exact.
    """
    p = np.asarray(p_hat, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p_hat must lie in [0, 1]")
    if beta <= 0:
        raise ValueError("beta must be positive")
    out = np.clip(numpy_impl.soft_values(np.atleast_1d(p), float(beta)), 0.0, 1.0)
    return float(out[0]) if p.ndim == 0 else out.reshape(p.shape)


def soft_value_general(rewards, beta: float) -> float:
    """Self-normalized plug-in ``sum r e^{r/beta} / sum e^{r/beta}`` for any real rewards."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("rewards must be non-empty")
    if beta <= 0:
        raise ValueError("beta must be positive")
    w = np.exp((r - r.max()) / beta)
    return float(np.dot(r, w) / w.sum())


class ValueTable:
    """Per-prompt reference statistics ``(n, p_hat)`` plus the beta grid."""

    def __init__(self, n, p_hat, grid: BetaGrid, reference_seed: int = 0):
        n = np.array(n, dtype=np.int64)
        p_hat = np.array(p_hat, dtype=np.float64)
        if n.shape != p_hat.shape or n.ndim != 1:
            raise ValueError("n and p_hat must be vectors of equal length")
        if np.any(n < 1):
            raise ValueError("every entry needs n >= 1")
        if np.any((p_hat < 0) | (p_hat > 1)):
            raise ValueError("p_hat must lie in [0, 1]")
        n.flags.writeable = False
        p_hat.flags.writeable = False
        self.n = n
        self.p_hat = p_hat
        self.grid = grid
        self.reference_seed = int(reference_seed)

    def __len__(self):
        return self.p_hat.size

    def __eq__(self, other):
        return (
            isinstance(other, ValueTable)
            and self.reference_seed == other.reference_seed
            and np.array_equal(self.n, other.n)
            and np.array_equal(self.p_hat, other.p_hat)
            and np.array_equal(self.grid.values, other.grid.values)
        )

    @property
    def entries(self) -> dict[int, dict]:
        return {i: {"n": int(self.n[i]), "p_hat": float(self.p_hat[i])} for i in range(len(self))}

    def check_covers(self, prompt_ids) -> None:
        ids = np.asarray(prompt_ids)
        bad = ids[(ids < 0) | (ids >= len(self))]
        if bad.size:
            raise KeyError(f"prompt ids not in value table: {bad.tolist()[:5]}")

    def values_at(self, prompt_ids, beta: float) -> np.ndarray:
        self.check_covers(prompt_ids)
        return soft_value(self.p_hat[np.asarray(prompt_ids)], beta)

    def odds_at(self, prompt_ids, beta: float) -> np.ndarray:
        """``V / (1 - V)`` at ``beta``, without forming ``1 - V``; inf where p_hat = 1."""
        self.check_covers(prompt_ids)
        if beta <= 0:
            raise ValueError("beta must be positive")
        return numpy_impl.soft_odds(self.p_hat[np.asarray(prompt_ids)], float(beta))

    def to_json(self) -> dict:
        n_values = set(self.n.tolist())
        return {
            "reference_seed": self.reference_seed,
            "n": n_values.pop() if len(n_values) == 1 else None,
            "grid": [float(b) for b in self.grid.values],
            "entries": [
                {"prompt_id": i, "n": int(self.n[i]), "p_hat": float(self.p_hat[i])} for i in range(len(self))
            ],
        }

    def save(self, path) -> None:
        # json writes floats with repr(), i.e. shortest round-tripping decimal
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ValueTable":
        d = json.loads(Path(path).read_text())
        entries = sorted(d["entries"], key=lambda e: e["prompt_id"])
        if [e["prompt_id"] for e in entries] != list(range(len(entries))):
            raise ValueError("table prompt ids must be contiguous from 0")
        return cls(
            [e["n"] for e in entries],
            [e["p_hat"] for e in entries],
            BetaGrid(d["grid"]),
            d.get("reference_seed", 0),
        )


def build_table(pop: PromptPopulation, n_per_prompt: int = 64, grid: BetaGrid | None = None, seed: int = 0) -> ValueTable:
    """Estimate each prompt's reference value from ``n_per_prompt`` seeded rollouts."""
    if n_per_prompt < 1:
        raise ValueError("n_per_prompt must be >= 1")
    grid = BetaGrid.default() if grid is None else grid
    rng = stream(seed)
    # successes of n Bernoulli(V) rollouts, drawn in one shot
    hits = rng.binomial(n_per_prompt, np.clip(pop.values(), 0.0, 1.0))
    return ValueTable(np.full(len(pop), n_per_prompt), hits / n_per_prompt, grid, seed)


def eval_table(table: ValueTable, prompt_id: int, beta_index: int) -> float:
    if not 0 <= prompt_id < len(table):
        raise KeyError(f"prompt id {prompt_id} not in value table")
    return soft_value(float(table.p_hat[prompt_id]), table.grid[beta_index])
