import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from basis_rl.env import stream
from basis_rl.estimators import (
    EstimatorSpec,
    RewardBatch,
    active_set,
    baseline_grpo,
    baseline_oracle,
    baseline_reinforcepp,
    baseline_rloo,
    baseline_zero,
    basis_advantages,
    basis_baseline_rvg,
    basis_weights_unb,
    basis_weights_vop,
    compute_advantages,
)
from basis_rl.offline_values import BetaGrid, ValueTable

GRID = BetaGrid.default()


def batch(rewards, ids=None):
    r = np.asarray(rewards, dtype=float)
    return RewardBatch(np.arange(r.shape[0]) if ids is None else ids, r)


def table(p_hat, n=64):
    return ValueTable([n] * len(p_hat), p_hat, GRID)


# simple baselines


def test_zero_identity():
    out = baseline_zero(batch([[1], [0], [1]]))
    np.testing.assert_array_equal(out.advantages[:, 0], [1, 0, 1])
    assert not baseline_zero(batch([[0], [0]])).advantages.any()
    r = np.array([[1, 0], [0, 0], [1, 1], [0, 1]], float)
    np.testing.assert_array_equal(baseline_zero(batch(r)).advantages, r)


def test_grpo_examples():
    out = baseline_grpo(batch([[1, 0, 1, 0], [1, 1, 1, 1]]))
    np.testing.assert_array_equal(out.baselines[0], 0.5)
    np.testing.assert_array_equal(out.advantages[1], 0.0)
    out = baseline_grpo(batch([[1], [0]]))
    assert out.baselines[0, 0] == 1 and out.advantages[0, 0] == 0
    out = baseline_grpo(batch([[1, 1, 1], [0, 1, 0]]))
    np.testing.assert_array_equal(out.baselines[0], 1.0)


def test_rloo_examples():
    out = baseline_rloo(batch([[1, 0, 1], [1, 1, 0]]))
    assert out.baselines[0, 0] == 0.5
    assert baseline_rloo(batch([[1, 1], [0, 0]])).baselines[0, 0] == 1.0
    np.testing.assert_array_equal(baseline_rloo(batch([[1, 0], [1, 1]])).advantages[0], [1, -1])
    with pytest.raises(ValueError):
        baseline_rloo(batch([[1], [0]]))


def test_reinforcepp_examples():
    np.testing.assert_array_equal(baseline_reinforcepp(batch([[1], [1], [0], [0]])).baselines, 0.5)
    assert not baseline_reinforcepp(batch([[1], [1], [1]])).advantages.any()
    np.testing.assert_array_equal(
        baseline_reinforcepp(batch([[1], [0], [0], [0]])).advantages[:, 0], [0.75, -0.25, -0.25, -0.25]
    )


def test_oracle_baseline():
    out = baseline_oracle(batch([[1, 0], [0, 0]]), [0.3, 0.6])
    np.testing.assert_allclose(out.advantages, [[0.7, -0.3], [-0.6, -0.6]])


def test_active_set_examples():
    np.testing.assert_array_equal(active_set([0, 0.5, 1], 1e-6), [False, True, False])
    assert not active_set([1e-6], 1e-6)[0]
    assert not active_set([1 - 1e-6], 1e-6)[0]
    assert active_set([0.5] * 4).all()


def test_spec_validation():
    assert EstimatorSpec("basis").variant == "unb"
    assert EstimatorSpec("basis", "vop").label == "basis-vop/G=1"
    assert EstimatorSpec("grpo", G=8).label == "grpo/G=8"
    for bad in [dict(family="ppo"), dict(family="basis", G=2), dict(family="rloo", G=1),
                dict(family="grpo", variant="unb"), dict(family="basis", variant="xyz"), dict(family="zero", G=0)]:
        with pytest.raises(ValueError):
            EstimatorSpec(**bad)


def test_batch_validation():
    with pytest.raises(ValueError):
        RewardBatch([0], [[1.0]])
    with pytest.raises(ValueError):
        RewardBatch([0, 1], [[1.0], [np.nan]])
    with pytest.raises(ValueError):
        RewardBatch([0, 1, 2], [[1.0], [0.0]])


# BASIS weights: hand-worked examples


def test_unb_homogeneous():
    w = basis_weights_unb([0.5, 0.5, 0.5], 0)
    np.testing.assert_allclose(w, [0, 0.5, 0.5], rtol=1e-15)


def test_unb_three_prompts():
    w = basis_weights_unb([0.2, 0.5, 0.8], 0)
    np.testing.assert_allclose(w, [0, 0.08, 0.2], rtol=1e-14)
    assert w @ [0.2, 0.5, 0.8] == pytest.approx(0.2, rel=1e-15)


def test_unb_two_prompts():
    w = basis_weights_unb([0.3, 0.7], 0)
    assert w[1] == pytest.approx(3 / 7, rel=1e-14)


def test_vop_examples():
    np.testing.assert_allclose(basis_weights_vop([0.2, 0.5, 0.8], 0), [0, 0.4 / 6, 1 / 6], rtol=1e-14)
    assert basis_weights_vop([0.5, 0.5], 1)[0] == pytest.approx(0.5, rel=1e-15)


def test_rvg_examples():
    assert basis_baseline_rvg([0.2, 0.5, 0.8], [1, 0, 1], 0) == pytest.approx(0.125, rel=1e-14)
    assert basis_baseline_rvg([0.4] * 4, [1, 0, 1, 1], 0) == pytest.approx(2 / 3, rel=1e-14)
    assert basis_baseline_rvg([0.3, 0.6, 0.9], [1, 0, 0], 0) == 0.0


def test_weights_reject_degenerate():
    with pytest.raises(ValueError):
        basis_weights_unb([0.5], 0)
    with pytest.raises(ValueError):
        basis_weights_unb([0.5, 1.0], 0)


# BASIS weights: properties

values_st = st.lists(st.floats(1e-3, 1 - 1e-3), min_size=2, max_size=64)


@settings(max_examples=200, deadline=None)
@given(values_st, st.data())
def test_unb_constraint(values, data):
    v = np.array(values)
    i = data.draw(st.integers(0, v.size - 1))
    w = basis_weights_unb(v, i)
    assert w[i] == 0
    assert w @ v == pytest.approx(v[i], rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(values_st, st.data())
def test_vop_is_shrunk_unb(values, data):
    v = np.array(values)
    i = data.draw(st.integers(0, v.size - 1))
    D = sum(v[j] / (1 - v[j]) for j in range(v.size) if j != i)
    np.testing.assert_allclose(basis_weights_vop(v, i), basis_weights_unb(v, i) * D / (1 + D), rtol=1e-12)


def test_unb_is_minimum_variance_among_unbiased():
    rng = stream(3)
    for _ in range(50):
        v = rng.uniform(0.01, 0.99, size=rng.integers(3, 20))
        i = int(rng.integers(v.size))
        w = basis_weights_unb(v, i)
        var = v * (1 - v)
        base = np.sum(w**2 * var)
        for _ in range(50):
            d = rng.normal(size=v.size)
            d[i] = 0
            others = np.arange(v.size) != i
            d[others] -= (d @ v) / (v[others] @ v[others]) * v[others]
            assert abs(d @ v) < 1e-12
            assert np.sum((w + d) ** 2 * var) >= base * (1 - 1e-12)


def test_unb_unbiased_by_simulation():
    rng = stream(8)
    v = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    w = basis_weights_unb(v, 2)
    draws = (rng.random((200_000, v.size)) < v).astype(float) @ w
    assert abs(draws.mean() - v[2]) < 4 * draws.std() / np.sqrt(draws.size)


def test_vop_zero_gradient():
    rng = stream(5)
    h = 1e-5
    for _ in range(50):
        v = rng.uniform(0.02, 0.98, size=rng.integers(2, 30))
        i = int(rng.integers(v.size))
        peers = np.flatnonzero(np.arange(v.size) != i)

        def mse(w):
            return np.sum(w**2 * v[peers] * (1 - v[peers])) + (w @ v[peers] - v[i]) ** 2

        w = basis_weights_vop(v, i)[peers]
        for k in range(peers.size):
            e = np.zeros(peers.size)
            e[k] = h
            assert abs((mse(w + e) - mse(w - e)) / (2 * h)) < 1e-9


# basis_advantages at a fixed beta


def test_basis_fallback_when_nothing_active():
    out = basis_advantages(batch([[1], [0], [1]]), table([1.0, 1.0, 1.0]), 1.0)
    np.testing.assert_array_equal(out.baselines, 0)
    np.testing.assert_array_equal(out.advantages[:, 0], [1, 0, 1])
    assert not out.active.any()


def test_basis_homogeneous_is_leave_one_out_mean():
    r = np.array([1, 0, 1, 1, 0], float)
    out = basis_advantages(batch(r[:, None]), table([0.4] * 5), 0.7)
    np.testing.assert_allclose(out.baselines[:, 0], (r.sum() - r) / 4, rtol=1e-14)


def test_basis_three_prompts_hand_value():
    # choose p_hat so that the tilted values at beta = 1 are (0.2, 0.5, 0.8)
    beta = 1.0
    targets = np.array([0.2, 0.5, 0.8])
    p = targets * np.exp(-1 / beta) / (1 - targets + targets * np.exp(-1 / beta))
    t = ValueTable([64] * 3, p, GRID)
    out = basis_advantages(batch([[1], [0], [1]]), t, beta)
    np.testing.assert_allclose(out.meta["initial_values"], targets, rtol=1e-12)
    assert out.baselines[0, 0] == pytest.approx(0.2, rel=1e-12)


def test_basis_requirements():
    t = table([0.5, 0.5])
    with pytest.raises(ValueError):
        basis_advantages(batch([[1, 0], [0, 1]]), t, 1.0)
    with pytest.raises(ValueError):
        basis_advantages(batch([[0.5], [1.0]]), t, 1.0)
    with pytest.raises(KeyError):
        basis_advantages(batch([[1], [0]], ids=[0, 5]), t, 1.0)


def test_basis_zero_baseline_only_when_peers_all_fail():
    rng = stream(2)
    for _ in range(200):
        B = int(rng.integers(2, 10))
        p = rng.uniform(0.05, 0.95, B)
        r = (rng.random(B) < 0.3).astype(float)
        out = basis_advantages(batch(r[:, None]), table(p), 0.5)
        for i in range(B):
            assert (out.baselines[i, 0] == 0.0) == (r.sum() - r[i] == 0)


# oracle equivalence on enumerable batches


def _all_reward_batches(B, G):
    for bits in itertools.product((0.0, 1.0), repeat=B * G):
        yield np.array(bits).reshape(B, G)


@pytest.mark.parametrize("B", [2, 3, 4])
@pytest.mark.parametrize("G", [1, 2])
def test_group_estimators_match_direct_loop(B, G):
    cases = [("zero", oracles.zero), ("grpo", oracles.grpo), ("reinforcepp", oracles.reinforcepp)]
    if G >= 2:
        cases.append(("rloo", oracles.rloo))
    for r in _all_reward_batches(B, G):
        for family, fn in cases:
            got = compute_advantages(EstimatorSpec(family, G=G), batch(r)).baselines
            np.testing.assert_allclose(got, fn(r.tolist()), rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", ["unb", "vop", "rvg"])
@pytest.mark.parametrize("B", [2, 3, 4])
def test_basis_fixed_beta_matches_direct_loop(variant, B):
    rng = stream(B, 1)
    for trial in range(20):
        p = rng.choice([0.0, 1.0, *rng.uniform(0.01, 0.99, 6)], size=B)
        t = table(p)
        beta = float(GRID[int(rng.integers(len(GRID)))])
        vals = [oracles.soft_value(x, beta) for x in p]
        for r in _all_reward_batches(B, 1):
            got = basis_advantages(batch(r), t, beta, variant).baselines[:, 0]
            want, _ = oracles.basis_at(vals, r[:, 0].tolist(), variant)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
