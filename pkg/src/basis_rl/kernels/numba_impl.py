"""Loop-based numba versions of the hot kernels.

Summation order mirrors ``numpy_impl`` (sequential prefix plus sequential
suffix) so the two backends agree to the last few ulps.
"""

import math

import numpy as np
from numba import njit

UNB, VOP, RVG = 0, 1, 2

_jit = dict(cache=True, nogil=True)


@njit(**_jit)
def _soft_value(p, beta):
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    return 1.0 / (1.0 + ((1.0 - p) / p) * math.exp(-1.0 / beta))


@njit(**_jit)
def soft_values(p_hat, beta):
    out = np.empty(p_hat.size)
    for i in range(p_hat.size):
        out[i] = _soft_value(p_hat[i], beta)
    return out


@njit(**_jit)
def _soft_odds(p, beta):
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return np.inf
    return p / (1.0 - p) * math.exp(1.0 / beta)


@njit(**_jit)
def soft_odds(p_hat, beta):
    out = np.empty(p_hat.size)
    for i in range(p_hat.size):
        out[i] = _soft_odds(p_hat[i], beta)
    return out


@njit(**_jit)
def _loo_sum(x, out):
    n = x.size
    acc = 0.0
    for i in range(n):
        out[i] = acc
        acc += x[i]
    acc = 0.0
    suffix = np.empty(n)
    for i in range(n - 1, -1, -1):
        suffix[i] = acc
        acc += x[i]
    for i in range(n):
        out[i] = out[i] + suffix[i]


@njit(**_jit)
def _refined_row(values, odds, rewards, active, variant, baselines, row_sums):
    n = values.size
    m = 0
    for i in range(n):
        if active[i]:
            m += 1
    if m < 2:
        for i in range(n):
            baselines[i] = 0.0
            row_sums[i] = 0.0
        return
    src = np.empty(n)
    w = np.empty(n)
    q = np.empty(n)
    for i in range(n):
        if active[i]:
            if variant == RVG:
                a = 1.0 / values[i]
            else:
                a = 1.0 + odds[i]
            src[i] = a * rewards[i]
            w[i] = a
            q[i] = odds[i]
        else:
            src[i] = 0.0
            w[i] = 0.0
            q[i] = 0.0
    num = np.empty(n)
    wsum = np.empty(n)
    _loo_sum(src, num)
    _loo_sum(w, wsum)
    den = np.empty(n)
    _loo_sum(q, den)
    for i in range(n):
        if not active[i]:
            baselines[i] = 0.0
            row_sums[i] = 0.0
            continue
        if variant == RVG:
            d = float(m - 1)
        elif variant == VOP:
            d = 1.0 + den[i]
        else:
            d = den[i]
        baselines[i] = values[i] * num[i] / d
        row_sums[i] = values[i] * wsum[i] / d


@njit(**_jit)
def refined_baselines(values, odds, rewards, active, variant):
    n = values.size
    baselines = np.empty(n)
    row_sums = np.empty(n)
    _refined_row(values, odds, rewards, active, variant, baselines, row_sums)
    return baselines, row_sums


@njit(**_jit)
def baseline_grid(p_hat, rewards, grid, epsilon, variant):
    m = grid.size
    n = p_hat.size
    baselines = np.empty((m, n))
    active = np.empty((m, n), dtype=np.bool_)
    row_sums = np.empty(n)
    for k in range(m):
        v = soft_values(p_hat, grid[k])
        o = soft_odds(p_hat, grid[k])
        for i in range(n):
            active[k, i] = v[i] > epsilon and v[i] < 1.0 - epsilon
        _refined_row(v, o, rewards, active[k], variant, baselines[k], row_sums)
    return baselines, active


@njit(**_jit)
def policy_update(logits, prompt_rows, actions, advantages, lr):
    n_rows = prompt_rows.size
    k = logits.shape[1]
    g = actions.shape[1]
    steps = np.zeros((n_rows, k))
    for r in range(n_rows):
        row = logits[prompt_rows[r]]
        mx = row.max()
        probs = np.exp(row - mx)
        probs /= probs.sum()
        for s in range(g):
            adv = advantages[r, s]
            for c in range(k):
                steps[r, c] -= adv * probs[c]
            steps[r, actions[r, s]] += adv
    for r in range(n_rows):
        for c in range(k):
            logits[prompt_rows[r], c] += lr * (steps[r, c] / g)
    return logits
