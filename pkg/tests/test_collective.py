from __future__ import annotations

import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import random_candidates, sequential_sweep_rmse
from swarmsense.collective import (
    TRACE_HEADER,
    Candidates,
    EmptyTree,
    Mailbox,
    Tree,
    brute_force_optimum,
    build_tree,
    global_cost,
    inject_failure,
    local_cost,
    rmse,
    run_collective_selection,
    write_trace,
)


# --- tree -------------------------------------------------------------------------

def test_single_agent_tree():
    tree = build_tree([5], [[0.0, 0.0]])
    assert tree.root == 5 and tree.edges() == [] and tree.children(5) == []


def test_seven_agents_perfect_tree():
    tree = build_tree(list(range(7)), np.arange(14, dtype=float).reshape(7, 2))
    assert tree.depth() == 2
    assert set(tree.leaf_depths()) == {2}
    assert len(tree.edges()) == 6


def test_sixteen_agents_level_order():
    rng = np.random.default_rng(0)
    pos = rng.random((16, 2))
    tree = build_tree(list(range(16)), pos)
    assert tree.depth() == 4
    # level-order oracle: level k holds positions 2^k-1 .. 2^(k+1)-2
    levels = [tree.order[2**k - 1: 2 ** (k + 1) - 1] for k in range(5)]
    assert [len(x) for x in levels] == [1, 2, 4, 8, 1]
    dist = np.linalg.norm(pos - pos.mean(axis=0), axis=1)
    assert list(tree.order) == list(np.argsort(dist, kind="stable"))
    for pos_i, agent in enumerate(tree.order[1:], start=1):
        assert tree.parent(agent) == tree.order[(pos_i - 1) // 2]


def test_build_tree_is_deterministic_on_ties():
    pos = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
    assert build_tree([3, 2, 1, 0], pos).order == [0, 1, 2, 3]


def test_empty_tree():
    with pytest.raises(EmptyTree):
        build_tree([], [])


def test_failure_leaf_of_three():
    tree = inject_failure(Tree([0, 1, 2]), 2)
    assert tree.order == [0, 1] and tree.edges() == [(0, 1)]


def test_failure_root_of_seven_keeps_balance():
    tree = inject_failure(Tree(list(range(7))), 0)
    assert len(tree) == 6 and tree.root == 6
    depths = tree.leaf_depths()
    assert max(depths) - min(depths) <= 1


def test_failure_errors():
    with pytest.raises(EmptyTree):
        inject_failure(Tree([4]), 4)
    with pytest.raises(KeyError):
        inject_failure(Tree([0, 1]), 9)


def test_mailbox_counts():
    box = Mailbox()
    box.send(0, 1, np.zeros(1))
    box.send(2, 1, np.ones(1))
    assert box.sent == 2
    assert [src for src, _ in box.receive(1)] == [0, 2]
    assert box.receive(1) == []


# --- cost -------------------------------------------------------------------------

def test_local_cost_examples():
    target = np.ones(4)
    plan = np.array([1, 0, 0, 0])
    assert local_cost(plan, 0.0, np.zeros(4), target, 0.0) == pytest.approx(np.sqrt(3 / 4))
    assert local_cost(plan, 0.37, np.zeros(4), target, 1.0) == pytest.approx(0.37)
    assert local_cost(np.ones(4), 0.9, np.zeros(4), target, 0.0) == 0.0
    # (1 - beta) * rmse + beta * energy
    assert local_cost(plan, 0.2, np.zeros(4), target, 0.25) == pytest.approx(0.75 * np.sqrt(0.75) + 0.05)
    with pytest.raises(ValueError):
        local_cost(plan, 0.0, np.zeros(3), target, 0.5)


def test_global_cost_at_beta_one_is_energy():
    assert global_cost(np.zeros(3), 0.25, np.ones(3), 1.0) == 0.25


# --- selection ----------------------------------------------------------------------

def test_single_agent_picks_argmin():
    cands = {0: Candidates(np.array([[1, 0], [1, 1], [0, 0]]), np.array([0.1, 0.2, 0.0]))}
    res = run_collective_selection(Tree([0]), cands, np.ones(2), 0.0, iterations=1)
    assert res.selected == {0: 1}
    assert np.array_equal(res.global_sum, [1, 1])


def test_two_agents_find_the_zero_mismatch_combination():
    target = np.array([1, 1, 0, 1])
    cands = {
        0: Candidates(np.array([[0, 1, 1, 0], [1, 0, 0, 0]]), np.zeros(2)),
        1: Candidates(np.array([[0, 0, 0, 1], [0, 1, 0, 1]]), np.zeros(2)),
    }
    # exhaustive oracle: exactly one of the four combinations fits the target
    hits = [c for c in itertools.product(range(2), range(2))
            if np.array_equal(cands[0].occupancy[c[0]] + cands[1].occupancy[c[1]], target)]
    assert hits == [(1, 1)]
    res = run_collective_selection(Tree([0, 1]), cands, target, 0.0, iterations=40)
    assert res.selected == {0: 1, 1: 1}
    assert rmse(res.global_sum, target) == 0.0


def test_beta_one_selects_min_energy():
    rng = np.random.default_rng(2)
    cands = random_candidates(rng, range(6), 5, 12)
    res = run_collective_selection(Tree(list(range(6))), cands, np.ones(12), 1.0, iterations=5)
    for u in range(6):
        assert res.selected[u] == int(np.argmin(cands[u].energy))


def test_rejects_bad_arguments():
    cands = {0: Candidates(np.zeros((1, 2)), np.zeros(1))}
    with pytest.raises(ValueError):
        run_collective_selection(Tree([0]), cands, np.ones(2), 0.0, iterations=0)
    with pytest.raises(ValueError):
        run_collective_selection(Tree([0]), cands, np.ones(2), 1.5)
    with pytest.raises(ValueError):
        run_collective_selection(Tree([0]), cands, np.ones(3), 0.0)
    with pytest.raises(ValueError):
        Candidates(np.zeros((0, 2)), np.zeros(0))


def check_aggregation(tree, cands, target, beta, iterations):
    res = run_collective_selection(tree, cands, target, beta, iterations, keep_sums=True)
    expected = sum(cands[u].occupancy[res.selected[u]] for u in tree.order)
    assert np.array_equal(res.global_sum, expected)
    for u in tree.order:
        assert np.array_equal(res.others[u] + cands[u].occupancy[res.selected[u]], res.global_sum)
    assert res.messages == [2 * (len(tree) - 1)] * iterations
    costs = [c for *_, c in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))
    return res


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1), st.booleans())
def test_aggregation_exactness_with_and_without_failure(n_agents, seed, fail):
    rng = np.random.default_rng(seed)
    width = 12
    tree = build_tree(list(range(n_agents)), rng.random((n_agents, 2)))
    if fail and n_agents > 1:
        tree = inject_failure(tree, int(rng.integers(n_agents)))
    cands = random_candidates(rng, tree.order, 3, width)
    target = (rng.random(width) < 0.6).astype(float)
    check_aggregation(tree, cands, target, float(rng.random()), iterations=3)


def test_sums_match_after_every_broadcast():
    rng = np.random.default_rng(9)
    tree = build_tree(list(range(10)), rng.random((10, 2)))
    cands = random_candidates(rng, range(10), 4, 20)
    res = run_collective_selection(tree, cands, np.ones(20), 0.2, 10, keep_sums=True)
    assert len(res.sums_after_broadcast) == 10
    assert np.array_equal(res.sums_after_broadcast[-1], res.global_sum)


def test_quality_against_brute_force_and_sweep():
    rng = np.random.default_rng(2024)
    close = 0
    for _ in range(20):
        cands = random_candidates(rng, range(4), 4, 16, p=0.35)
        target = (rng.random(16) < 0.6).astype(float)
        tree = build_tree(list(range(4)), rng.random((4, 2)))
        res = run_collective_selection(tree, cands, target, 0.0, 40)
        best = brute_force_optimum(cands, target, 0.0)
        got = rmse(res.global_sum, target)
        close += got <= 1.1 * best + 1e-12
        assert got <= sequential_sweep_rmse(tree.order[::-1], cands, target) + 1e-12
    assert close >= 16


def test_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    write_trace(path, [(1, 0.5, 0.1, 0.3), (2, 0.4, 0.1, 0.25)])
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TRACE_HEADER
    assert rows[2] == ["2", "0.4", "0.1"]
