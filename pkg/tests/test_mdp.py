import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from batchmarl.errors import ConfigurationError
from batchmarl.mdp import (
    R_MAX,
    BatchDataset,
    MdpSpec,
    all_joint_controls,
    decode_controls,
    encode_controls,
    evaluate_policy,
    generate_random_mdp,
    sample_batch,
    step,
)


def single_state_spec(mean_reward, m=2):
    return MdpSpec(m=m, X=1, local_control_cardinality=2, P=np.ones((1, 2**m, 1)), R=np.array([mean_reward]))


def test_paper_dimensions():
    spec = generate_random_mdp(5, 5, seed=0)
    assert spec.P.shape == (5, 32, 5)
    assert len(spec.P) == 5 and spec.P[0].shape == (32, 5)


def test_single_state_rows_are_one():
    spec = generate_random_mdp(2, 1, seed=4)
    np.testing.assert_array_equal(spec.P, np.ones((1, 4, 1)))
    rng = np.random.default_rng(0)
    assert all(step(spec, 0, code, rng)[0] == 0 for code in range(4))


def test_row_sums():
    spec = generate_random_mdp(3, 4, seed=42)
    assert np.max(np.abs(spec.P.sum(axis=-1) - 1.0)) <= 1e-12
    assert np.all(spec.P >= 0)
    assert np.all((spec.R >= 0) & (spec.R <= 5))
    spec.validate()


@pytest.mark.parametrize("m,X", [(0, 3), (2, 0), (-1, -1)])
def test_invalid_dimensions(m, X):
    with pytest.raises(ConfigurationError):
        generate_random_mdp(m, X, seed=0)


def test_same_seed_bit_identical():
    a, b = generate_random_mdp(3, 4, seed=9), generate_random_mdp(3, 4, seed=9)
    np.testing.assert_array_equal(a.P, b.P)
    np.testing.assert_array_equal(a.R, b.R)
    da, db = sample_batch(a, 300, np.random.default_rng(1)), sample_batch(b, 300, np.random.default_rng(1))
    assert da.to_csv() == db.to_csv()


def test_encoding_agent_zero_least_significant():
    assert encode_controls([1, 0, 0], 2) == 1
    assert encode_controls([0, 0, 1], 2) == 4
    assert encode_controls([2, 1], 3) == 5
    codes = np.arange(27)
    np.testing.assert_array_equal(encode_controls(decode_controls(codes, 3, 3), 3), codes)
    np.testing.assert_array_equal(all_joint_controls(2, 2), [[0, 0], [1, 0], [0, 1], [1, 1]])


def test_step_zero_mean_reward_clamped():
    spec = single_state_spec(0.0)
    rng = np.random.default_rng(3)
    rewards = [step(spec, 0, [0, 1], rng)[1] for _ in range(500)]
    assert min(rewards) == 0.0
    assert max(rewards) <= 0.5


def test_step_deterministic_given_seed():
    spec = generate_random_mdp(3, 4, seed=1)
    a = step(spec, 2, [1, 0, 1], np.random.default_rng(77))
    b = step(spec, 2, [1, 0, 1], np.random.default_rng(77))
    assert a == b


def test_step_range_checks():
    spec = generate_random_mdp(2, 3, seed=1)
    with pytest.raises(ConfigurationError):
        step(spec, 3, [0, 0], 0)
    with pytest.raises(ConfigurationError):
        step(spec, 0, 4, 0)


def test_sample_batch_sizes():
    spec = generate_random_mdp(5, 5, seed=0)
    assert sample_batch(spec, 2000, np.random.default_rng(0)).L == 2000
    one = sample_batch(spec, 1, np.random.default_rng(0))
    assert one.L == 1 and len(one.samples) == 1
    with pytest.raises(ConfigurationError):
        sample_batch(spec, 0, 0)


def test_state_frequencies_within_binomial_bounds():
    spec = generate_random_mdp(2, 5, seed=2)
    L = 100_000
    ds = sample_batch(spec, L, np.random.default_rng(12))
    counts = np.bincount(ds.x, minlength=5)
    p = 1 / 5
    assert np.all(np.abs(counts - L * p) <= 3 * np.sqrt(L * p * (1 - p)))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_transition_frequencies_match_rows():
    spec = generate_random_mdp(2, 4, seed=5)
    rng = np.random.default_rng(0)
    n = 20_000
    nxt = np.array([step(spec, 1, 2, rng)[0] for _ in range(n)])
    observed = np.bincount(nxt, minlength=4)
    assert stats.chisquare(observed, n * spec.P[1, 2]).pvalue > 1e-3


def test_rewards_in_bounds():
    spec = generate_random_mdp(3, 6, seed=8)
    ds = sample_batch(spec, 5000, np.random.default_rng(1))
    assert ds.r.min() >= 0 and ds.r.max() <= R_MAX
    assert np.all(np.abs(ds.r - spec.R[ds.x_plus]) <= 0.5 + 1e-12)


def test_evaluate_zero_horizon():
    spec = generate_random_mdp(2, 3, seed=1)
    res = evaluate_policy(spec, [0, 0, 0], tau=0, trials=5)
    assert res.mean_cumulative == 0.0 and res.mean_discounted == 0.0


def test_evaluate_single_state_mean():
    tau, trials = 100, 400
    res = evaluate_policy(single_state_spec(5.0), lambda x: [1, 1], tau=tau, trials=trials, beta=0.5, seed=3)
    # sum of tau U[4.5, 5.5] draws: mean 5*tau, variance tau/12
    sigma = np.sqrt(tau / 12 / trials)
    assert abs(res.mean_cumulative - 5 * tau) < 4 * sigma
    assert res.cumulative.shape == (trials,)
    assert abs(res.mean_discounted - 5.0) < 0.1  # sum beta^T * 5 for T >= 1 -> 5


def test_evaluate_trials_independent_of_count():
    spec = generate_random_mdp(3, 4, seed=1)
    a = evaluate_policy(spec, [0, 1, 2, 3], tau=20, trials=5, seed=9)
    b = evaluate_policy(spec, [0, 1, 2, 3], tau=20, trials=8, seed=9)
    np.testing.assert_array_equal(a.cumulative, b.cumulative[:5])


def test_evaluate_requires_total_policy():
    spec = generate_random_mdp(2, 3, seed=1)
    with pytest.raises(ConfigurationError):
        evaluate_policy(spec, [0, 1], tau=5, trials=2)


def test_mdp_json_roundtrip():
    spec = generate_random_mdp(2, 3, seed=6)
    doc = json.loads(spec.to_json())
    assert set(doc) >= {"m", "X", "P", "R", "seed"}
    back = MdpSpec.from_json(spec.to_json())
    np.testing.assert_array_equal(back.P, spec.P)
    np.testing.assert_array_equal(back.R, spec.R)
    assert back.seed == 6


def test_batch_csv_and_json_roundtrip():
    spec = generate_random_mdp(3, 4, seed=6)
    ds = sample_batch(spec, 50, np.random.default_rng(0))
    text = ds.to_csv()
    assert text.splitlines()[0] == "x,u_0,u_1,u_2,x_plus,r"
    back = BatchDataset.from_csv(text, n_states=4)
    for col in ("x", "u", "x_plus", "r"):
        np.testing.assert_array_equal(getattr(back, col), getattr(ds, col))
    again = BatchDataset.from_json(ds.to_json())
    np.testing.assert_array_equal(again.r, ds.r)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 4), X=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_generator_invariants(m, X, seed):
    spec = generate_random_mdp(m, X, seed=seed)
    assert spec.P.shape == (X, 2**m, X)
    assert np.all(spec.P >= 0)
    assert np.max(np.abs(spec.P.sum(axis=-1) - 1)) <= 1e-12
    ds = sample_batch(spec, 64, np.random.default_rng(seed))
    assert np.all((ds.r >= 0) & (ds.r <= R_MAX))
