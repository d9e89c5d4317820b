import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gazesom.sampling import (
    SamplingConfig,
    compute_weights,
    draw_order,
    draw_plan,
    plan_to_timestamps,
)

from oracles import naive_draw, naive_weights


def test_uniform_collapse_example():
    assert list(compute_weights(5, 0.0)) == [0.25, 0.25, 0.25, 0.25]


def test_lambda_one_four_frames():
    # independent: e^-2, e^-1, e^0 normalized
    z = math.exp(-2) + math.exp(-1) + 1.0
    oracle = [math.exp(-2) / z, math.exp(-1) / z, 1.0 / z]
    got = compute_weights(4, 1.0)
    np.testing.assert_allclose(got, oracle, rtol=0, atol=1e-15)
    np.testing.assert_allclose(got, [0.09003, 0.24473, 0.66524], atol=1e-5)


def test_two_frames_single_weight():
    assert list(compute_weights(2, 0.5)) == [1.0]


@pytest.mark.parametrize("lam", [-0.01, 1.01, float("nan")])
def test_lambda_domain(lam):
    with pytest.raises(ValueError):
        compute_weights(10, lam)
    with pytest.raises(ValueError):
        SamplingConfig(lam, 5, 0)


@pytest.mark.parametrize("nv", [0, 1])
def test_degenerate_length(nv):
    with pytest.raises(ValueError):
        compute_weights(nv, 0.5)


def test_zero_sample_size_rejected():
    with pytest.raises(ValueError):
        SamplingConfig(0.1, 0, 0)


def test_seed_range():
    SamplingConfig(0.1, 3, 2**64 - 1)
    with pytest.raises(ValueError):
        SamplingConfig(0.1, 3, 2**64)


@settings(max_examples=200)
@given(st.integers(2, 2000), st.floats(0, 1))
def test_weights_match_naive_and_normalize(nv, lam):
    w = compute_weights(nv, lam)
    assert w.shape == (nv - 1,)
    assert abs(w.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(w, naive_weights(nv, lam), rtol=1e-12, atol=1e-300)


@settings(max_examples=100)
@given(st.integers(3, 500), st.floats(1e-3, 1))
def test_geometric_ratio(nv, lam):
    w = compute_weights(nv, lam)
    ratio = w[1:] / w[:-1]
    np.testing.assert_allclose(ratio, math.exp(lam), rtol=1e-12)
    assert (np.diff(w) > 0).all()


def test_large_clip_no_underflow_to_zero_sum():
    w = compute_weights(100_000, 1.0)
    assert w[-1] > 0.6 and abs(w.sum() - 1) < 1e-12


# -------------------------------------------------------------------- plans


def test_plan_returns_all_frames_when_n_exceeds_length():
    assert draw_plan(3, SamplingConfig(0.1, 5, 123)).frame_indices == (0, 1, 2)


def test_plan_single_frame_clip():
    assert draw_plan(1, SamplingConfig(0.5, 1, 0)).frame_indices == (0,)


def test_plan_n1_is_just_last_frame():
    assert draw_plan(40, SamplingConfig(0.5, 1, 9)).frame_indices == (39,)


def test_plan_example_fifty_frames():
    plan = draw_plan(50, SamplingConfig(0.1, 10, 7))
    assert len(plan.frame_indices) == 10
    assert plan.frame_indices[-1] == 49
    assert list(plan.frame_indices) == sorted(set(plan.frame_indices))
    assert plan.sequence_length == 50
    assert abs(plan.probabilities.sum() - 1) < 1e-12


def test_plan_is_deterministic():
    cfg = SamplingConfig(0.04, 15, 2024)
    assert draw_plan(250, cfg).frame_indices == draw_plan(250, cfg).frame_indices


def test_different_seeds_differ():
    plans = {draw_plan(250, SamplingConfig(0.01, 15, s)).frame_indices for s in range(20)}
    assert len(plans) > 1


@settings(max_examples=300)
@given(st.integers(1, 300), st.integers(1, 40), st.floats(0, 1), st.integers(0, 2**64 - 1))
def test_plan_invariants(nv, n, lam, seed):
    idx = draw_plan(nv, SamplingConfig(lam, n, seed)).frame_indices
    assert idx[-1] == nv - 1
    assert len(idx) == min(n, nv)
    assert all(a < b for a, b in zip(idx, idx[1:]))
    assert 0 <= idx[0]


def test_first_pick_follows_weights_small():
    nv, lam, trials = 8, 0.7, 20_000
    p = compute_weights(nv, lam)
    counts = np.zeros(nv - 1)
    for s in range(trials):
        counts[draw_order(nv, SamplingConfig(lam, 3, s))[0]] += 1
    assert stats.chisquare(counts, p * trials).pvalue > 0.001


def test_inclusion_matches_naive_oracle_small():
    nv, n, lam, trials = 12, 4, 0.3, 20_000
    ours = np.zeros(nv)
    ref = np.zeros(nv)
    rng = random.Random(99)
    for s in range(trials):
        ours[list(draw_plan(nv, SamplingConfig(lam, n, s)).frame_indices)] += 1
        ref[naive_draw(nv, n, lam, rng) + [nv - 1]] += 1
    table = np.vstack([ours[:-1], ref[:-1]])
    assert stats.chi2_contingency(table).pvalue > 0.001


def test_extreme_bias_still_fills_sample():
    idx = draw_plan(5000, SamplingConfig(1.0, 30, 3)).frame_indices
    assert len(idx) == 30


# -------------------------------------------------------------------- timestamps


def test_timestamps():
    cfg = SamplingConfig(0.0, 2, 0)
    plan = draw_plan(11, cfg)
    assert plan_to_timestamps(plan, 10)[-1] == 1.0
    from gazesom.sampling import SamplingPlan

    assert plan_to_timestamps(SamplingPlan((0, 10), np.ones(1), cfg, 11), 10) == [0.0, 1.0]
    assert plan_to_timestamps(SamplingPlan((249,), np.ones(1), cfg, 250), 25) == [9.96]


def test_timestamps_reject_zero_fps():
    plan = draw_plan(1, SamplingConfig(0.0, 1, 0))
    with pytest.raises(ValueError):
        plan_to_timestamps(plan, 0)


def test_plan_json_shape():
    d = draw_plan(50, SamplingConfig(0.1, 15, 7)).to_dict()
    assert set(d) == {"indices", "probabilities", "lambda", "n", "seed"}
    assert len(d["probabilities"]) == 49
