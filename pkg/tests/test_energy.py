import numpy as np
import pytest

from meshannot.energy import (BinaryLabelingProblem, brute_force_labeling,
                              labeling_energy, solve_binary_labeling)


def _problem(costs, edges=(), weights=(), lam=1.0):
    return BinaryLabelingProblem(np.asarray(costs, dtype=float),
                                 np.asarray(edges, dtype=np.int64).reshape(-1, 2),
                                 np.asarray(weights, dtype=float), lam)


def _random_problem(rng, n_max=15, allow_negative=True):
    n = int(rng.integers(2, n_max + 1))
    lo = -3.0 if allow_negative else 0.0
    costs = rng.uniform(lo, 3.0, size=(n, 2))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = int(rng.integers(0, min(len(pairs), 3 * n) + 1))
    sel = rng.choice(len(pairs), size=k, replace=False) if k else []
    edges = np.array([pairs[i] for i in sel], dtype=np.int64).reshape(-1, 2)
    weights = rng.uniform(0, 2.0, size=len(edges))
    lam = float(rng.uniform(0, 2.0))
    return _problem(costs, edges, weights, lam)


def test_no_edges_pernode_argmin():
    p = _problem([[0, 1], [1, 0]])
    labels, energy = solve_binary_labeling(p)
    assert labels.tolist() == [0, 1]
    assert energy == 0.0


def test_strong_edge_forces_agreement():
    p = _problem([[0, 1], [1, 0]], [(0, 1)], [10.0], lam=1.0)
    labels, energy = solve_binary_labeling(p)
    assert labels[0] == labels[1]
    assert energy == pytest.approx(1.0)
    bf_labels, bf_energy = brute_force_labeling(p)
    assert bf_energy == energy


def test_all_equal_costs_tie_breaks_to_label0():
    p = _problem([[2, 2], [2, 2], [2, 2]], [(0, 1), (1, 2)], [1.0, 1.0], lam=0.5)
    labels, energy = solve_binary_labeling(p)
    assert labels.tolist() == [0, 0, 0]
    assert energy == pytest.approx(6.0)


def test_lambda_zero_takes_pernode_argmin():
    rng = np.random.default_rng(5)
    costs = rng.uniform(-1, 1, size=(12, 2))
    costs[3] = (0.5, 0.5)   # tie goes to label 0
    edges = [(i, i + 1) for i in range(11)]
    p = _problem(costs, edges, np.ones(11), lam=0.0)
    labels, _ = solve_binary_labeling(p)
    expect = np.where(costs[:, 1] < costs[:, 0], 1, 0)
    assert labels.tolist() == expect.tolist()


def test_brute_force_single_node():
    p = _problem([[3, 5]])
    labels, energy = brute_force_labeling(p)
    assert labels.tolist() == [0]
    assert energy == 3.0


def test_brute_force_node_limit():
    p = _problem(np.zeros((21, 2)))
    with pytest.raises(ValueError):
        brute_force_labeling(p)


def test_solver_validates_inputs():
    with pytest.raises(ValueError):
        _problem([[0, np.nan]])
    with pytest.raises(ValueError):
        _problem([[0, 1], [1, 0]], [(0, 0)], [1.0])
    with pytest.raises(ValueError):
        _problem([[0, 1], [1, 0]], [(0, 1)], [-1.0])
    with pytest.raises(ValueError):
        _problem([[0, 1], [1, 0]], [(0, 1), (1, 0)], [1.0, 1.0])


def test_solver_matches_brute_force_500_instances():
    rng = np.random.default_rng(1234)
    for _ in range(500):
        p = _random_problem(rng)
        _, solver_energy = solve_binary_labeling(p)
        _, bf_energy = brute_force_labeling(p)
        assert solver_energy == bf_energy


def test_constant_shift_property():
    rng = np.random.default_rng(77)
    for _ in range(30):
        p = _random_problem(rng, n_max=10)
        labels, energy = solve_binary_labeling(p)
        c = float(rng.uniform(-5, 5))
        shifted = _problem(p.node_costs + np.array([[c, c]] + [[0, 0]] * (p.n_nodes - 1)),
                           p.edges, p.edge_weights, p.smoothness)
        labels2, energy2 = solve_binary_labeling(shifted)
        assert energy2 == pytest.approx(energy + c, abs=1e-9)
        assert labeling_energy(p, labels2) == pytest.approx(energy, abs=1e-9)


def test_brute_force_tie_breaks_lexicographically():
    # Two optimal labelings: (0,0) and (1,1); lexicographically smallest wins.
    p = _problem([[1, 1], [1, 1]], [(0, 1)], [2.0], lam=1.0)
    labels, _ = brute_force_labeling(p)
    assert labels.tolist() == [0, 0]
