"""Vectorized numpy versions of the hot kernels.

Every function here has a loop-based twin in ``numba_impl`` with the same
signature. Leave-one-out sums are built from exclusive prefix and suffix
cumulative sums rather than ``total - own`` so that a single dominant term
cannot cancel the rest.
"""

import numpy as np

UNB, VOP, RVG = 0, 1, 2


def soft_values(p_hat, beta):
    p = np.asarray(p_hat, dtype=np.float64)
    out = np.empty_like(p)
    zero = p <= 0.0
    one = p >= 1.0
    mid = ~(zero | one)
    pm = p[mid]
    out[mid] = 1.0 / (1.0 + ((1.0 - pm) / pm) * np.exp(-1.0 / beta))
    out[zero] = 0.0
    out[one] = 1.0
    return out


def soft_odds(p_hat, beta):
    """``V / (1 - V)`` of the tilted value, computed as ``p / (1 - p) * e^{1/beta}``.

    Going through ``1 - V`` loses digits when V is close to 1; this form does not.
    """
    p = np.asarray(p_hat, dtype=np.float64)
    out = np.empty_like(p)
    zero = p <= 0.0
    one = p >= 1.0
    mid = ~(zero | one)
    pm = p[mid]
    out[mid] = pm / (1.0 - pm) * np.exp(1.0 / beta)
    out[zero] = 0.0
    out[one] = np.inf
    return out


def _loo_sum(x):
    """Leave-one-out sums along the last axis: ``out[..., i] = sum_{j != i} x[..., j]``."""
    zeros = np.zeros(x.shape[:-1] + (1,), dtype=x.dtype)
    prefix = np.concatenate([zeros, np.cumsum(x, axis=-1)[..., :-1]], axis=-1)
    rev = np.cumsum(x[..., ::-1], axis=-1)[..., ::-1]
    suffix = np.concatenate([rev[..., 1:], zeros], axis=-1)
    return prefix + suffix


def refined_baselines(values, odds, rewards, active, variant):
    """Batchwise baselines for all prompts, borrowing only from active peers.

    ``odds`` is ``values / (1 - values)``, passed separately so it can be
    computed without cancellation. Returns ``(baselines, row_sums)``;
    inactive prompts, and every prompt when fewer than two are active, get 0
    for both.
    """
    values = np.asarray(values, dtype=np.float64)
    odds = np.asarray(odds, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    active = np.asarray(active, dtype=bool)
    b, rs = refined_baselines_grid(values[None, :], odds[None, :], rewards, active[None, :], variant)
    return b[0], rs[0]


def refined_baselines_grid(values, odds, rewards, active, variant):
    """Row-wise ``refined_baselines`` over stacks of shape (M, B)."""
    v = np.where(active, values, 0.5)
    o = np.where(active, odds, 0.0)
    m = active.sum(axis=1)
    if variant == RVG:
        inv = np.where(active, 1.0 / v, 0.0)
        num = _loo_sum(inv * rewards[None, :])
        wsum = _loo_sum(inv)
        denom = np.maximum(m - 1, 1).astype(np.float64)[:, None]
    else:
        # V_j / sigma_j^2 = 1 / (1 - V_j) = 1 + odds_j and V_j^2 / sigma_j^2 = odds_j
        a = np.where(active, 1.0 + o, 0.0)
        num = _loo_sum(a * rewards[None, :])
        wsum = _loo_sum(a)
        denom = _loo_sum(o)
        if variant == VOP:
            denom = 1.0 + denom
    ok = active & (m >= 2)[:, None]
    safe = np.where(ok, denom, 1.0)
    baselines = np.where(ok, v * num / safe, 0.0)
    row_sums = np.where(ok, v * wsum / safe, 0.0)
    return baselines, row_sums


def baseline_grid(p_hat, rewards, grid, epsilon, variant):
    """Refined baselines at every grid beta.

    Returns ``(baselines, active)``, both of shape (len(grid), B).
    """
    p = np.asarray(p_hat, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    values = np.empty((grid.size, p.size))
    odds = np.empty((grid.size, p.size))
    for k in range(grid.size):
        values[k] = soft_values(p, grid[k])
        odds[k] = soft_odds(p, grid[k])
    active = (values > epsilon) & (values < 1.0 - epsilon)
    baselines, _ = refined_baselines_grid(values, odds, np.asarray(rewards, dtype=np.float64), active, variant)
    return baselines, active


def policy_update(logits, prompt_rows, actions, advantages, lr):
    """In-place REINFORCE step on a (N, K) logit table.

    ``actions`` and ``advantages`` are (B, G); each row's G score terms are
    averaged and all scores use the pre-update logits of that prompt.
    """
    rows = logits[prompt_rows]
    z = rows - rows.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    n_rows, k = rows.shape
    g = actions.shape[1]
    onehot = np.zeros((n_rows, g, k))
    np.put_along_axis(onehot, actions[:, :, None], 1.0, axis=2)
    score = onehot - probs[:, None, :]
    step = (advantages[:, :, None] * score).sum(axis=1) / g
    np.add.at(logits, prompt_rows, lr * step)
    return logits
