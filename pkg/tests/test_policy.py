import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batchmarl.amafqi import amafqi_run
from batchmarl.errors import InconclusivePolicyError
from batchmarl.forest import ForestParams, one_hot_states
from batchmarl.mdp import BatchDataset, all_joint_controls
from batchmarl.oracle import DeterministicToy, tabular_q_iterate
from batchmarl.policy import (
    SENTINEL,
    PolicyTable,
    check_update_predicate,
    generalize,
    greedy_gap_audit,
    policy_update_light,
    replay_policy,
    state_index,
)

from tabular import full_coverage_dataset

TABULAR = ForestParams(n_trees=3, n_min=1)


@pytest.fixture
def coordination_toy():
    # codes: 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1); joint (1,1) pays most in both states
    delta = np.array([[0, 1, 0, 1], [1, 0, 1, 0]])
    r = np.array([[1.0, 0.0, 0.0, 4.0], [1.0, 0.0, 0.0, 4.0]])
    return DeterministicToy(delta, r, m=2)


def brute_force_argmax(toy, beta=0.5, sweeps=80):
    q = tabular_q_iterate(toy, beta, sweeps)[-1]
    return all_joint_controls(toy.m, toy.n_local)[q.argmax(axis=1)]


def test_state_index():
    ds = BatchDataset([0, 2, 0, 0], [[0, 1], [1, 1], [0, 1], [1, 0]], [1, 1, 1, 1], [0, 0, 0, 0], n_states=3)
    assert state_index(ds, 1) == []
    assert state_index(ds, 0) == [0, 2, 3]
    assert state_index(ds, 2) == [1]


@settings(max_examples=30, deadline=None)
@given(xs=st.lists(st.integers(0, 4), min_size=1, max_size=40), x=st.integers(0, 4))
def test_state_index_linear_scan(xs, x):
    n = len(xs)
    ds = BatchDataset(xs, np.zeros((n, 2), int), np.zeros(n, int), np.zeros(n), n_states=5)
    assert state_index(ds, x) == [l for l, v in enumerate(xs) if v == x]


def test_initial_all_sentinel():
    table = PolicyTable.initial(4, 3, 1e-3, [0, 1, 2])
    assert table.is_sentinel().all()
    assert np.all(table.entries == SENTINEL)


def test_huge_gamma_never_leaves_sentinel(small_instance):
    _, ds = small_instance
    res = amafqi_run(ds, 0.5, 1e-3, gamma=1e6, seed=0)
    assert res.model.policy.is_sentinel().all()
    with pytest.raises(InconclusivePolicyError):
        generalize(res.model.policy, ds, seed=0)


def test_toy_policy_attains_bruteforce_argmax(coordination_toy):
    ds = full_coverage_dataset(coordination_toy.delta, coordination_toy.r, 2, repeats=2)
    res = amafqi_run(ds, 0.5, 1e-6, params=TABULAR, seed=0)
    expected = brute_force_argmax(coordination_toy)
    np.testing.assert_array_equal(res.model.policy.entries, expected)
    np.testing.assert_array_equal(expected, [[1, 1], [1, 1]])


@pytest.mark.parametrize("agent", [0, 1])
def test_light_toy_policy_agent_component(coordination_toy, agent):
    ds = full_coverage_dataset(coordination_toy.delta, coordination_toy.r, 2, repeats=2)
    res = amafqi_run(ds, 0.5, 1e-6, params=TABULAR, seed=0, light_agent=agent)
    table = res.model.policy
    expected = brute_force_argmax(coordination_toy)
    assert not table.is_sentinel().any()
    np.testing.assert_array_equal(table.entries[:, agent], expected[:, agent])
    # first qualifying sample in batch order: the only other agent's control is 0 first
    for x in range(2):
        assert table.entries[x, 1 - agent] == 0


def test_light_update_is_single_agent_rule(small_instance):
    _, ds = small_instance
    res = amafqi_run(ds, 0.5, 1e-3, seed=2, light_agent=1)
    lq = res.model.local(1)
    replayed = replay_policy([lq], ds, 1e-3)
    np.testing.assert_array_equal(replayed.entries, res.model.policy.entries)
    # a single step through the light entry point agrees with the generic replay
    table = PolicyTable.initial(ds.n_states, ds.m, 1e-3, [1])
    first = type(lq)(**{**lq.__dict__, "grid_log": lq.grid_log[:2], "iteration": 1})
    step = policy_update_light(table, first, ds)
    np.testing.assert_array_equal(step.entries, replay_policy([first], ds, 1e-3).entries)


def test_replay_and_predicate(small_instance):
    _, ds = small_instance
    res = amafqi_run(ds, 0.5, 1e-3, seed=3)
    model = res.model
    replayed = replay_policy(model.locals, ds, model.gamma)
    np.testing.assert_array_equal(replayed.entries, model.policy.entries)
    np.testing.assert_array_equal(replayed.last_update, model.policy.last_update)
    assert check_update_predicate(model.policy, model.locals) == []
    for x in model.policy.labeled_states():
        match = [l for l in state_index(ds, x) if np.array_equal(ds.u[l], model.policy.entries[x])]
        assert match, "policy control must come from the batch at that state"


def test_gap_audit(small_instance):
    _, ds = small_instance
    model = amafqi_run(ds, 0.5, 1e-3, seed=3).model
    report = greedy_gap_audit(model.policy, model.locals, ds)
    assert len(report.rows) == len(model.policy.labeled_states())
    for row in report.rows:
        assert set(row.gaps) == set(model.agents)
        assert all(g >= -1e-12 for g in row.gaps.values())
    assert 0.0 <= report.fraction_within_gamma <= 1.0


def test_generalize_without_sentinel_is_lookup():
    entries = np.array([[0, 1], [1, 1], [1, 0]])
    table = PolicyTable(entries, 1e-3, np.ones(3, int), (0, 1))
    ds = BatchDataset([0, 1, 2], [[0, 0]] * 3, [0, 0, 0], [0, 0, 0], n_states=3)
    gp = generalize(table, ds, seed=0)
    assert not gp.uses_classifier
    np.testing.assert_array_equal(gp.actions(), entries)


def test_generalize_one_labeled_state_is_constant():
    entries = np.full((4, 2), SENTINEL)
    entries[2] = [1, 0]
    table = PolicyTable(entries, 1e-3, np.zeros(4, int), (0, 1))
    rng = np.random.default_rng(0)
    ds = BatchDataset(rng.integers(0, 4, 80), rng.integers(0, 2, (80, 2)), rng.integers(0, 4, 80), np.ones(80), 4)
    gp = generalize(table, ds, seed=1)
    assert gp.uses_classifier
    for x in range(4):
        np.testing.assert_array_equal(gp(x), [1, 0])


def _walk(tree, row):
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if row[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return node


def test_generalize_half_sentinel_majority_mass():
    entries = np.full((4, 2), SENTINEL)
    entries[0] = [1, 1]
    entries[1] = [0, 1]
    table = PolicyTable(entries, 1e-3, np.zeros(4, int), (0, 1))
    x = np.array([0] * 7 + [1] * 4 + [2] * 5 + [3] * 6)
    ds = BatchDataset(x, np.zeros((len(x), 2), int), np.zeros(len(x), int), np.zeros(len(x)), n_states=4)
    gp = generalize(table, ds, ForestParams(n_trees=3, n_min=2), seed=5)
    clf = gp.classifier
    train = one_hot_states(x[x < 2], 4)
    labels = [tuple(entries[s]) for s in x[x < 2]]
    for state in (2, 3):
        query = one_hot_states([state], 4)[0]
        mass = {}
        for tree in clf.trees:
            leaf = _walk(tree, query)
            members = [i for i, row in enumerate(train) if _walk(tree, row) == leaf]
            for i in members:
                mass[labels[i]] = mass.get(labels[i], 0.0) + 1 / len(members) / clf.e
        # ties go to the smaller code, agent 0 least significant: (0,1) -> 2, (1,1) -> 3
        best = max(mass.values())
        winner = min((lab for lab, v in mass.items() if v >= best - 1e-12), key=lambda u: u[0] + 2 * u[1])
        assert tuple(gp(state)) == winner
    for state in (0, 1):
        np.testing.assert_array_equal(gp(state), entries[state])


def test_csv_roundtrip():
    entries = np.array([[1, 0, 1], [SENTINEL] * 3])
    table = PolicyTable(entries, 1e-3, np.array([3, -1]), (0, 1, 2))
    text = table.to_csv()
    assert text.splitlines() == ["state,u_0,u_1,u_2", "0,1,0,1", "1,-1,-1,-1"]
    np.testing.assert_array_equal(PolicyTable.from_csv(text).entries, entries)


def test_policy_tie_break_deterministic(small_instance):
    _, ds = small_instance
    a = amafqi_run(ds, 0.5, 1e-3, seed=8).model.policy
    b = amafqi_run(ds, 0.5, 1e-3, seed=8).model.policy
    assert a.to_csv() == b.to_csv()
