"""MSE diagnostics for value/baseline estimators on a synthetic population.

Protocols:

* ``group-sweep``: aggregate MSE for each estimator and group size, with the
  G-rollout estimate computed from the first G rewards of a shared draw.
* ``heterogeneity``: batches binned post hoc by the std of their true values.
* ``difficulty``: prompts binned by true value after full-batch estimation,
  with the frequency of exactly-0/1 baselines.
* ``beta-curve``: MSE of the tilted initial values and of the refined
  batchwise values across a beta grid.

Each repeat draws from its own seeded stream and results are reduced in
repeat order with ``math.fsum``, so serial and threaded runs agree bit for
bit.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .env import PromptPopulation, monte_carlo_values, stream, tilt_population
from .estimators import EstimatorSpec, RewardBatch, compute_advantages
from .offline_values import BetaGrid, ValueTable, soft_value

CSV_HEADER = ("estimator", "variant", "G", "bin_lo", "bin_hi", "mse", "collapse_freq", "n")
PROTOCOLS = ("group-sweep", "heterogeneity", "difficulty", "beta-curve")
_PROTOCOL_KEY = {name: i for i, name in enumerate(PROTOCOLS)}


def default_estimators(group_sizes=(1, 2, 4, 8)) -> tuple[EstimatorSpec, ...]:
    specs = [EstimatorSpec("zero"), EstimatorSpec("reinforcepp")]
    specs += [EstimatorSpec("grpo", G=g) for g in sorted(group_sizes)]
    specs += [EstimatorSpec("rloo", G=g) for g in sorted(group_sizes) if g >= 2]
    specs += [EstimatorSpec("basis", v) for v in ("unb", "vop", "rvg")]
    return tuple(specs)


@dataclass
class DiagnosticsConfig:
    batch_size: int = 64
    repeats: int = 10
    group_sizes: tuple[int, ...] = (1, 2, 4, 8)
    heterogeneity_batches: int = 500
    heterogeneity_bins: int = 5
    difficulty_bin_edges: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    seed: int = 0
    estimators: tuple[EstimatorSpec, ...] | None = None
    # current policy = reference tilted by this beta; None means no drift
    drift_beta: float | None = None
    # 0 uses exact values as the oracle, otherwise a Monte-Carlo oracle from this many rollouts
    oracle_rollouts: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.repeats < 1 or self.heterogeneity_batches < 1:
            raise ValueError("repeats and batch counts must be positive")
        if self.heterogeneity_bins < 1:
            raise ValueError("need at least one heterogeneity bin")
        edges = np.asarray(self.difficulty_bin_edges)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("difficulty bin edges must be strictly increasing")
        if self.estimators is None:
            self.estimators = default_estimators(self.group_sizes)
        self.estimators = tuple(self.estimators)

    def to_json(self) -> dict:
        d = asdict(self)
        d["estimators"] = [asdict(s) for s in self.estimators]
        return d


@dataclass
class ReportRow:
    estimator: str
    variant: str
    G: int
    bin_lo: float | None
    bin_hi: float | None
    mse: float
    collapse_freq: float
    n: int


@dataclass
class DiagnosticsReport:
    protocol: str
    rows: list[ReportRow]
    config: dict
    seed: int
    # raw per-repeat / per-batch values backing the rows, keyed by estimator label
    samples: dict = field(default_factory=dict, repr=False)

    def row(self, label: str, bin_index: int | None = None) -> ReportRow:
        matches = [r for r in self.rows if _row_label(r) == label]
        if not matches:
            raise KeyError(label)
        return matches[0 if bin_index is None else bin_index]

    def mse(self, label: str) -> np.ndarray:
        return np.array([r.mse for r in self.rows if _row_label(r) == label])

    def collapse(self, label: str) -> np.ndarray:
        return np.array([r.collapse_freq for r in self.rows if _row_label(r) == label])

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _row_label(r: ReportRow) -> str:
    name = f"{r.estimator}-{r.variant}" if r.variant else r.estimator
    return f"{name}/G={r.G}"


def _spec_row(spec: EstimatorSpec, **kw) -> ReportRow:
    return ReportRow(spec.family, spec.variant or "", spec.G, **kw)


def _mean(xs) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else float("nan")


# ---------------------------------------------------------------------------
# shared per-batch evaluation


@dataclass
class BatchEval:
    prompt_ids: np.ndarray
    truth: np.ndarray
    # label -> per-prompt squared error averaged over the G baselines
    sq_err: dict
    # label -> per-prompt fraction of the G baselines that are exactly 0 or 1
    collapsed: dict


def _current_policy(pop: PromptPopulation, config: DiagnosticsConfig) -> PromptPopulation:
    return pop if config.drift_beta is None else tilt_population(pop, config.drift_beta)


def evaluate_batch(
    current: PromptPopulation, table: ValueTable, config: DiagnosticsConfig, rng: np.random.Generator,
    oracle_rng: np.random.Generator | None = None,
) -> BatchEval:
    """Draw one batch, run every configured estimator, and score against the oracle."""
    ids = np.sort(rng.choice(len(current), size=config.batch_size, replace=False))
    g_max = max(s.G for s in config.estimators)
    _, rewards = current.sample(ids, g_max, rng)
    if config.oracle_rollouts > 0:
        truth = monte_carlo_values(current, config.oracle_rollouts, oracle_rng, ids)
    else:
        truth = current.values()[ids]
    sq_err, collapsed = {}, {}
    for spec in config.estimators:
        batch = RewardBatch(ids, rewards[:, : spec.G])
        b = compute_advantages(spec, batch, table).baselines
        sq_err[spec.label] = np.array([_mean(row) for row in (b - truth[:, None]) ** 2])
        collapsed[spec.label] = ((b == 0.0) | (b == 1.0)).mean(axis=1)
    return BatchEval(ids, truth, sq_err, collapsed)


def run_batches(pop, table, config: DiagnosticsConfig, protocol: str, count: int) -> list[BatchEval]:
    """Evaluate ``count`` independent batches, in order, optionally on threads."""
    if table is not None:
        table.check_covers(np.arange(len(pop)))
    if len(pop) < config.batch_size:
        raise ValueError(f"population of {len(pop)} is smaller than batch size {config.batch_size}")
    current = _current_policy(pop, config)
    key = _PROTOCOL_KEY[protocol]

    def one(r):
        return evaluate_batch(current, table, config, stream(config.seed, key, r), stream(config.seed, key, r, 1))

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            return list(ex.map(one, range(count)))
    return [one(r) for r in range(count)]


# ---------------------------------------------------------------------------
# protocols


def mse_sweep(pop, table, config: DiagnosticsConfig) -> DiagnosticsReport:
    evals = run_batches(pop, table, config, "group-sweep", config.repeats)
    rows, samples = [], {}
    for spec in config.estimators:
        per_rep = np.array([_mean(e.sq_err[spec.label]) for e in evals])
        col = [_mean(e.collapsed[spec.label]) for e in evals]
        samples[spec.label] = per_rep
        rows.append(
            _spec_row(spec, bin_lo=None, bin_hi=None, mse=_mean(per_rep), collapse_freq=_mean(col),
                      n=config.batch_size * len(evals))
        )
    return DiagnosticsReport("group-sweep", rows, config.to_json(), config.seed, samples)


def heterogeneity_bins(scores, n_bins: int) -> np.ndarray:
    """Uniform bin edges over the observed score range; one bin if the range is empty."""
    lo, hi = float(np.min(scores)), float(np.max(scores))
    if hi <= lo:
        return np.array([lo, hi])
    return np.linspace(lo, hi, n_bins + 1)


def assign_bins(x, edges) -> np.ndarray:
    """Half-open bins ``[e_k, e_{k+1})`` with the last bin closed."""
    idx = np.searchsorted(edges, x, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def heterogeneity_sweep(pop, table, config: DiagnosticsConfig) -> DiagnosticsReport:
    evals = run_batches(pop, table, config, "heterogeneity", config.heterogeneity_batches)
    scores = np.array([np.std(e.truth) for e in evals])
    edges = heterogeneity_bins(scores, config.heterogeneity_bins)
    which = assign_bins(scores, edges)
    rows, samples = [], {"score": scores, "bin": which, "edges": edges}
    for spec in config.estimators:
        batch_mse = np.array([_mean(e.sq_err[spec.label]) for e in evals])
        batch_col = np.array([_mean(e.collapsed[spec.label]) for e in evals])
        samples[spec.label] = batch_mse
        for k in range(len(edges) - 1):
            members = np.flatnonzero(which == k)
            rows.append(
                _spec_row(spec, bin_lo=float(edges[k]), bin_hi=float(edges[k + 1]),
                          mse=_mean(batch_mse[members]), collapse_freq=_mean(batch_col[members]),
                          n=int(members.size))
            )
    return DiagnosticsReport("heterogeneity", rows, config.to_json(), config.seed, samples)


def difficulty_sweep(pop, table, config: DiagnosticsConfig) -> DiagnosticsReport:
    evals = run_batches(pop, table, config, "difficulty", config.repeats)
    edges = np.asarray(config.difficulty_bin_edges, dtype=np.float64)
    n_bins = edges.size - 1
    rows, samples = [], {"edges": edges}
    for spec in config.estimators:
        # (repeat, bin) means over the batch-bin group; NaN where the group is empty
        mse_rb = np.full((len(evals), n_bins), np.nan)
        col_rb = np.full((len(evals), n_bins), np.nan)
        counts = np.zeros(n_bins, dtype=np.int64)
        for r, e in enumerate(evals):
            which = assign_bins(e.truth, edges)
            for k in range(n_bins):
                m = which == k
                if m.any():
                    mse_rb[r, k] = _mean(e.sq_err[spec.label][m])
                    col_rb[r, k] = _mean(e.collapsed[spec.label][m])
                    counts[k] += int(m.sum())
        samples[spec.label] = mse_rb
        samples[spec.label + ":collapse"] = col_rb
        for k in range(n_bins):
            rows.append(
                _spec_row(spec, bin_lo=float(edges[k]), bin_hi=float(edges[k + 1]),
                          mse=_mean(x for x in mse_rb[:, k] if not np.isnan(x)),
                          collapse_freq=_mean(x for x in col_rb[:, k] if not np.isnan(x)),
                          n=int(counts[k]))
            )
    return DiagnosticsReport("difficulty", rows, config.to_json(), config.seed, samples)


@dataclass
class BetaCurve:
    betas: np.ndarray
    initial_mse: np.ndarray
    refined_mse: np.ndarray
    mean_active_count: np.ndarray
    variant: str
    drift_beta: float | None
    repeats: int
    batch_size: int

    def report(self, config: DiagnosticsConfig) -> DiagnosticsReport:
        rows = []
        n = self.repeats * self.batch_size
        for name, curve in (("initial", self.initial_mse), ("refined", self.refined_mse)):
            for beta, mse in zip(self.betas, curve):
                rows.append(ReportRow(name, self.variant, 1, float(beta), float(beta), float(mse), float("nan"), n))
        samples = {"betas": self.betas, "initial": self.initial_mse, "refined": self.refined_mse}
        return DiagnosticsReport("beta-curve", rows, config.to_json(), config.seed, samples)


def compare_initial_vs_refined(pop, table, beta_grid: BetaGrid | None, config: DiagnosticsConfig,
                               variant: str = "unb", epsilon: float = 1e-6) -> BetaCurve:
    """MSE across ``beta_grid`` of the tilted table values and of the batchwise refinement.

    The refined estimate uses one rollout per prompt from the current
    (possibly drifted) policy; prompts outside the active set count with the
    zero baseline.
    """
    grid = (beta_grid or table.grid).values
    table.check_covers(np.arange(len(pop)))
    current = _current_policy(pop, config)
    truth_all = current.values()
    code = kernels.VARIANT_CODES[variant]
    key = _PROTOCOL_KEY["beta-curve"]

    def one(r):
        rng = stream(config.seed, key, r)
        ids = np.sort(rng.choice(len(current), size=config.batch_size, replace=False))
        _, rewards = current.sample(ids, 1, rng)
        if config.oracle_rollouts > 0:
            truth = monte_carlo_values(current, config.oracle_rollouts, stream(config.seed, key, r, 1), ids)
        else:
            truth = truth_all[ids]
        p = table.p_hat[ids]
        initial = np.stack([soft_value(p, b) for b in grid])
        refined, active = kernels.baseline_grid(p, rewards[:, 0], grid, epsilon, code)
        return (
            ((initial - truth) ** 2).mean(axis=1),
            ((refined - truth) ** 2).mean(axis=1),
            active.sum(axis=1),
        )

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            parts = list(ex.map(one, range(config.repeats)))
    else:
        parts = [one(r) for r in range(config.repeats)]
    init = np.array([_mean(p[0][k] for p in parts) for k in range(grid.size)])
    ref = np.array([_mean(p[1][k] for p in parts) for k in range(grid.size)])
    act = np.array([_mean(p[2][k] for p in parts) for k in range(grid.size)])
    return BetaCurve(grid.copy(), init, ref, act, variant, config.drift_beta, config.repeats, config.batch_size)


# ---------------------------------------------------------------------------
# statistics


def bootstrap(statistic, *samples, n_boot: int = 2000, seed: int = 0) -> np.ndarray:
    """Paired nonparametric bootstrap: resample row indices shared by all samples."""
    n = len(samples[0])
    if any(len(s) != n for s in samples):
        raise ValueError("paired bootstrap needs samples of equal length")
    rng = stream(seed, 991)
    idx = rng.integers(0, n, size=(n_boot, n))
    return np.array([statistic(*(np.asarray(s)[i] for s in samples)) for i in idx])


def binned_bootstrap(values, bins, n_bins: int, n_boot: int = 2000, seed: int = 0) -> np.ndarray:
    """Per-bin means under resampling within each bin; shape ``(n_boot, n_bins)``."""
    rng = stream(seed, 992)
    values = np.asarray(values)
    out = np.full((n_boot, n_bins), np.nan)
    for k in range(n_bins):
        member = values[np.asarray(bins) == k]
        if member.size:
            idx = rng.integers(0, member.size, size=(n_boot, member.size))
            out[:, k] = member[idx].mean(axis=1)
    return out


def run_protocol(protocol: str, pop, table, config: DiagnosticsConfig, beta_grid: BetaGrid | None = None):
    if protocol == "group-sweep":
        return mse_sweep(pop, table, config)
    if protocol == "heterogeneity":
        return heterogeneity_sweep(pop, table, config)
    if protocol == "difficulty":
        return difficulty_sweep(pop, table, config)
    if protocol == "beta-curve":
        return compare_initial_vs_refined(pop, table, beta_grid, config).report(config)
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
