import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import random_instance
from layerlink import (Mode, ModelParams, MultilayerGraph, expected_edges, expected_edges_tensor,
                       hard_assignment, log_likelihood, normalize_memberships, sample_network)
from layerlink.model import ISOLATED


def test_mode_parse_and_aliases():
    assert Mode.parse("full") is Mode.DIRECTED_FULL
    assert Mode.parse("diagonal") is Mode.DIRECTED_DIAGONAL
    assert Mode.parse("undirected-diagonal").diagonal
    assert not Mode.UNDIRECTED_FULL.directed
    with pytest.raises(ValueError):
        Mode.parse("tucker")


def test_params_validation():
    u = np.ones((3, 2))
    with pytest.raises(ValueError):
        ModelParams(-u, u, np.ones((1, 2, 2)))
    with pytest.raises(ValueError):
        ModelParams(u, 2 * u, np.ones((1, 2, 2)), Mode.UNDIRECTED_FULL)
    with pytest.raises(ValueError):
        ModelParams(u, u, np.array([[[1.0, 2.0], [0.0, 1.0]]]), Mode.UNDIRECTED_FULL)
    with pytest.raises(ValueError):
        ModelParams(u, u, np.ones((1, 2, 2)), Mode.DIRECTED_DIAGONAL)
    with pytest.raises(ValueError):
        ModelParams(u, u, np.ones((1, 3, 3)))
    p = ModelParams(u, u, np.ones((1, 2, 2)))
    assert (p.n_nodes, p.k_groups, p.n_layers) == (3, 2, 1)
    with pytest.raises(ValueError):
        p.u[0, 0] = 5


def test_expected_edges_single_term():
    p = ModelParams([[2.0], [1.0]], [[1.0], [3.0]], [[[0.5]]])
    assert expected_edges(p, 0, 1, 0) == 3.0


def test_expected_edges_zero_membership():
    p = ModelParams([[0.0, 0.0], [1.0, 1.0]], np.ones((2, 2)), np.ones((1, 2, 2)))
    assert expected_edges(p, 0, 1, 0) == 0.0


def test_expected_edges_double_loop_oracle():
    u = np.array([[1.0, 0.5], [0.0, 0.0]])
    v = np.array([[0.0, 0.0], [0.2, 1.0]])
    w = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    # 1*0.2*1 + 1*1*2 + 0.5*0.2*3 + 0.5*1*4
    assert expected_edges(ModelParams(u, v, w), 0, 1, 0) == pytest.approx(4.5, abs=1e-15)
    assert expected_edges(ModelParams(u, v, w), 0, 1, 0) == pytest.approx(
        oracles.mean_count(u, v, w, 0, 1, 0), abs=1e-15)


def test_expected_edges_index_errors():
    p = ModelParams(np.ones((2, 1)), np.ones((2, 1)), np.ones((1, 1, 1)))
    with pytest.raises(IndexError):
        expected_edges(p, 2, 0, 0)
    with pytest.raises(IndexError):
        expected_edges(p, 0, 0, 1)


@given(st.integers(0, 10_000))
def test_tensor_matches_scalar_exactly(seed):
    _, _, p, _ = random_instance(seed)
    M = expected_edges_tensor(p)
    n = p.n_nodes
    for a in range(p.n_layers):
        for i in range(n):
            for j in range(n):
                assert M[a, i, j] == expected_edges(p, i, j, a)


@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_expected_edges_linear_in_each_factor(seed, c):
    _, _, p, _ = random_instance(seed, directed=True, diagonal=False)
    base = expected_edges_tensor(p)
    for scaled in (ModelParams(c * p.u, p.v, p.w), ModelParams(p.u, c * p.v, p.w),
                   ModelParams(p.u, p.v, c * p.w)):
        np.testing.assert_allclose(expected_edges_tensor(scaled), c * base, rtol=1e-12)


def test_log_likelihood_empty_graph_zero_params():
    g = MultilayerGraph.from_edges(3, 2, [])
    p = ModelParams(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2, 2)))
    assert log_likelihood(g, p) == 0.0


def test_log_likelihood_single_dyad():
    g = MultilayerGraph.from_edges(2, 1, [(0, 1, 0, 1)])
    p = ModelParams([[1.0], [0.0]], [[0.0], [1.0]], [[[1.0]]])
    assert log_likelihood(g, p) == -1.0


def test_log_likelihood_zero_probability_edge():
    g = MultilayerGraph.from_edges(2, 1, [(0, 1, 0, 1)])
    p = ModelParams([[0.0], [1.0]], [[1.0], [1.0]], [[[1.0]]])
    assert log_likelihood(g, p) == -math.inf


@pytest.mark.parametrize("seed", range(12))
def test_log_likelihood_dense_oracle(seed):
    g, A, p, hold = random_instance(seed, holdout_frac=0.3 if seed % 2 else 0.0)
    dy = oracles.dyad_set(g.n_nodes, g.n_layers, g.directed, g.allow_self_loops, hold)
    expect = oracles.log_likelihood(A, p.u, p.v, p.w, dy)
    assert log_likelihood(g, p, holdout=hold) == pytest.approx(expect, rel=1e-12)


def test_log_likelihood_three_node_two_layer():
    g, A, p, _ = random_instance(5, n=3, n_layers=2, directed=True, loops=True)
    dy = oracles.dyad_set(3, 2, True, True)
    assert log_likelihood(g, p) == pytest.approx(oracles.log_likelihood(A, p.u, p.v, p.w, dy),
                                                 rel=1e-12)


@given(st.integers(0, 10_000), st.floats(0.2, 5))
def test_log_likelihood_scaling(seed, c):
    g, A, p, _ = random_instance(seed, directed=True, diagonal=False)
    M = expected_edges_tensor(p)
    mask = np.ones_like(M, dtype=bool)
    if not g.allow_self_loops:
        for a in range(g.n_layers):
            np.fill_diagonal(mask[a], False)
    scaled = ModelParams(p.u, p.v, c * p.w)
    delta = A.sum() * math.log(c) - (c - 1) * M[mask].sum()
    assert log_likelihood(g, scaled) - log_likelihood(g, p) == pytest.approx(delta, rel=1e-9, abs=1e-9)


def test_self_loop_flag_changes_likelihood():
    g = MultilayerGraph.from_edges(2, 1, [(0, 1, 0, 1)], allow_self_loops=True)
    p = ModelParams(np.ones((2, 1)), np.ones((2, 1)), np.ones((1, 1, 1)))
    # 4 ordered pairs with M=1 vs 2 off-diagonal ones
    assert log_likelihood(g, p) == -4.0
    assert log_likelihood(g, p, allow_self_loops=False) == -2.0


def test_undirected_likelihood_counts_pairs_once():
    g = MultilayerGraph.from_edges(3, 1, [(0, 1, 0, 2)], directed=False)
    p = ModelParams(np.ones((3, 1)), np.ones((3, 1)), np.full((1, 1, 1), 0.5), Mode.UNDIRECTED_FULL)
    # three unordered pairs with M = 0.5, one with A = 2
    assert log_likelihood(g, p) == pytest.approx(2 * math.log(0.5) - 1.5)


def test_sample_zero_w_is_empty():
    p = ModelParams(np.ones((4, 2)), np.ones((4, 2)), np.zeros((2, 2, 2)))
    assert sample_network(p, 1).n_edges == 0


def test_sample_deterministic():
    _, _, p, _ = random_instance(3)
    a, b = sample_network(p, 11), sample_network(p, 11)
    assert np.array_equal(a.to_dense(), b.to_dense())


def test_sample_poisson_mean():
    # 100k independent layers with M = 0.3 on the single off-diagonal dyad
    L = 100_000
    p = ModelParams([[1.0], [0.0]], [[0.0], [1.0]], np.full((L, 1, 1), 0.3))
    g = sample_network(p, 7)
    mean = g.total_weight / L
    tol = 4 * math.sqrt(0.3 / L)
    assert 0.3 - tol <= mean <= 0.3 + tol


def test_sample_undirected_mirrors_and_skips_diagonal():
    p = ModelParams(np.ones((5, 1)), np.ones((5, 1)), np.full((1, 1, 1), 3.0), Mode.UNDIRECTED_FULL)
    g = sample_network(p, 2)
    assert not g.directed and np.all(g.src < g.dst)


def test_sample_then_k1_estimate_recovers_total():
    rng = np.random.default_rng(0)
    u = rng.uniform(0.5, 1.5, (40, 1))
    p = ModelParams(u, u[::-1], np.full((2, 1, 1), 0.2))
    g = sample_network(p, 3)
    M = expected_edges_tensor(p)
    assert abs(g.total_weight - M.sum()) <= 4 * math.sqrt(M.sum())


def test_normalize_examples():
    nm = normalize_memberships([[2, 2], [0, 0], [1, 3]])
    np.testing.assert_allclose(nm.values, [[0.5, 0.5], [0, 0], [0.25, 0.75]])
    assert list(nm.isolated) == [False, True, False]
    with pytest.raises(ValueError):
        normalize_memberships([[1, -1]])


@given(st.lists(st.lists(st.floats(0, 1e6), min_size=3, max_size=3), min_size=1, max_size=20))
def test_normalized_rows_sum_to_one(rows):
    nm = normalize_memberships(rows)
    sums = nm.values.sum(axis=1)
    assert np.all(np.abs(sums[~nm.isolated] - 1) <= 1e-12)
    assert np.all(sums[nm.isolated] == 0)


def test_hard_assignment_examples():
    labels = hard_assignment(normalize_memberships([[0.1, 0.9], [0.5, 0.5], [0, 0]]))
    assert list(labels) == [1, 0, ISOLATED]
