import numpy as np
import pytest

from batchmarl.mdp import all_joint_controls
from batchmarl.oracle import (
    DeterministicToy,
    proposition1_check,
    project_to_agents,
    random_deterministic_toy,
    tabular_distributed_iterate,
    tabular_distributed_sweep,
    tabular_q_iterate,
    tabular_q_sweep,
)


@pytest.fixture
def toy():
    # 2 states, 2 agents; codes 0..3 are (0,0), (1,0), (0,1), (1,1)
    delta = np.array([[0, 1, 1, 0], [1, 0, 0, 1]])
    r = np.array([[1.0, 0.0, 0.0, 2.0], [0.0, 3.0, 0.0, 1.0]])
    return DeterministicToy(delta, r, m=2)


def test_first_sweep_is_reward(toy):
    q1 = tabular_q_sweep(toy.delta, toy.r, np.zeros_like(toy.r), 0.5)
    np.testing.assert_array_equal(q1, toy.r)


def test_beta_zero_fixed_point(toy):
    q1 = tabular_q_sweep(toy.delta, toy.r, np.zeros_like(toy.r), 0.0)
    np.testing.assert_array_equal(tabular_q_sweep(toy.delta, toy.r, q1, 0.0), q1)


def test_three_sweeps_by_hand(toy):
    # max Q1 per state: [2, 3]
    # Q2 = r + 0.5 * [max Q1 at delta]:  state 0 -> [1+1, 0+1.5, 0+1.5, 2+1] ; state 1 -> [0+1.5, 3+1, 0+1, 1+1.5]
    q = tabular_q_iterate(toy, 0.5, 3)
    np.testing.assert_allclose(q[2], [[2.0, 1.5, 1.5, 3.0], [1.5, 4.0, 1.0, 2.5]])
    # max Q2 per state: [3, 4]
    np.testing.assert_allclose(q[3], [[2.5, 2.0, 2.0, 3.5], [2.0, 4.5, 1.5, 3.0]])


def test_distributed_first_sweep(toy):
    lq1 = tabular_distributed_sweep(toy.delta, toy.r, np.zeros((2, 2, 2)), 0.5, 2, 2)
    ctrl = all_joint_controls(2, 2)
    for j in range(2):
        for a in range(2):
            np.testing.assert_array_equal(lq1[j, :, a], toy.r[:, ctrl[:, j] == a].max(axis=1))


def test_single_agent_reduces_to_central():
    toy = random_deterministic_toy(1, 4, seed=3, n_local=3)
    q = tabular_q_iterate(toy, 0.5, 10)
    lq = tabular_distributed_iterate(toy, 0.5, 10)
    for n in range(11):
        np.testing.assert_array_equal(lq[n][0], q[n])


def test_sweeps_monotone():
    toy = random_deterministic_toy(3, 4, seed=1)
    q = tabular_q_iterate(toy, 0.5, 20)
    lq = tabular_distributed_iterate(toy, 0.5, 20)
    for n in range(20):
        assert np.all(q[n + 1] >= q[n]) and np.all(lq[n + 1] >= lq[n])


@pytest.mark.parametrize("seed", range(10))
def test_proposition1_random(seed):
    toy = random_deterministic_toy(2 + seed % 2, 2 + seed % 3, seed=seed)
    holds, dev = proposition1_check(toy, 0.5, 20)
    assert holds and dev <= 1e-12


def test_proposition1_rejects_negative_reward(toy):
    bad = DeterministicToy(toy.delta, toy.r - 5, 2)
    with pytest.raises(ValueError):
        proposition1_check(bad)


def test_projection_shape(toy):
    assert project_to_agents(toy.r, 2, 2).shape == (2, 2, 2)
