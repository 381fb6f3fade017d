import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegeom.graph import (
    GenerationError,
    GraphFormatError,
    GraphOperator,
    LabeledFeatures,
    WeightedGraph,
    class_features,
    generate_geometric_knn,
    generate_sbm,
    knn_indices,
    laplacian,
    parse_graph,
    read_graph,
    scale_operator,
    write_graph,
)
from sparsegeom.numerics import operator_norm

from conftest import random_connected_graph, unit_path, unit_triangle


def algebraic_connectivity(g):
    return np.linalg.eigvalsh(laplacian(g).matrix)[1]


# ---- WeightedGraph ---------------------------------------------------------


def test_edges_are_canonicalised():
    g = WeightedGraph.from_edges(3, [(2, 1, 0.5), (0, 1, 2.0)])
    assert g.edges == [(0, 1, 2.0), (1, 2, 0.5)]


@pytest.mark.parametrize(
    "edges",
    [
        [(0, 0, 1.0)],
        [(0, 3, 1.0)],
        [(0, 1, 0.0)],
        [(0, 1, -1.0)],
        [(0, 1, 1.0), (1, 0, 2.0)],
    ],
)
def test_invalid_graphs_rejected(edges):
    with pytest.raises(ValueError):
        WeightedGraph.from_edges(3, edges)


def test_graph_arrays_are_read_only():
    g = unit_triangle()
    with pytest.raises(ValueError):
        g.w[0] = 5.0


def test_labeled_features_requires_nonempty_classes():
    with pytest.raises(ValueError):
        LabeledFeatures(np.zeros((3, 2)), np.array([0, 2, 2]))
    f = LabeledFeatures(np.zeros((3, 2)), np.array([0, 1, 1]))
    assert f.num_classes == 2
    assert list(f.class_sizes) == [1, 2]


# ---- SBM -------------------------------------------------------------------


def test_sbm_default_configuration_size():
    g = generate_sbm((80, 80, 80, 80), 0.20, 0.05, seed=0)
    assert g.n == 320
    assert g.is_connected()
    assert 0.5 <= g.w.min() and g.w.max() <= 1.5


def test_sbm_complete_triangle():
    g = generate_sbm((3,), 1.0, 1.0, seed=3)
    assert g.num_edges == 3


def test_sbm_edge_count_seed_7():
    g = generate_sbm((50, 50), 0.3, 0.02, seed=7)
    pairs_in, pairs_out = 2 * math.comb(50, 2), 2500
    mean = 0.3 * pairs_in + 0.02 * pairs_out
    sd = math.sqrt(pairs_in * 0.3 * 0.7 + pairs_out * 0.02 * 0.98)
    assert mean == pytest.approx(785)
    assert abs(g.num_edges - mean) <= 4 * sd


def test_sbm_block_counts_concentrate():
    sizes = (40, 40, 40)
    block = np.repeat(np.arange(3), sizes)
    pairs_in = 3 * math.comb(40, 2)
    pairs_out = math.comb(120, 2) - pairs_in
    for seed in range(20):
        g = generate_sbm(sizes, 0.25, 0.05, seed=seed)
        same = block[g.u] == block[g.v]
        for count, pairs, p in ((same.sum(), pairs_in, 0.25), ((~same).sum(), pairs_out, 0.05)):
            assert abs(count - pairs * p) <= 4 * math.sqrt(pairs * p * (1 - p))


def test_sbm_determinism():
    a = generate_sbm((20, 20), 0.3, 0.1, seed=11)
    b = generate_sbm((20, 20), 0.3, 0.1, seed=11)
    assert a.same_structure(b)
    assert not a.same_structure(generate_sbm((20, 20), 0.3, 0.1, seed=12))


def test_sbm_disconnected_reports_seed():
    with pytest.raises(GenerationError) as info:
        generate_sbm((5, 5), 1.0, 1e-9, seed=99)
    assert info.value.seed == 99


@pytest.mark.parametrize("kwargs", [dict(p_in=0.0, p_out=0.1), dict(p_in=0.5, p_out=1.5)])
def test_sbm_rejects_bad_probabilities(kwargs):
    with pytest.raises(ValueError):
        generate_sbm((5, 5), **kwargs)


def test_generators_are_connected():
    for seed in range(5):
        assert algebraic_connectivity(generate_sbm((30, 30), 0.2, 0.05, seed=seed)) > 1e-8
        g, _ = generate_geometric_knn(30, 2, 5, 6, seed=seed)
        assert algebraic_connectivity(g) > 1e-8


# ---- geometric k-NN --------------------------------------------------------


def test_geometric_default_configuration_size():
    g, feats = generate_geometric_knn(80, 4, 20, 30, seed=0)
    assert g.n == 320
    assert feats.X.shape == (320, 20)
    assert feats.num_classes == 4
    # union symmetrisation: every node keeps at least its own k neighbours
    assert np.all(laplacian(g).matrix.diagonal() > 0)
    assert g.num_edges >= 320 * 30 // 2


def test_geometric_two_nodes_single_edge():
    g, _ = generate_geometric_knn(2, 1, 3, 1, seed=0)
    assert g.num_edges == 1
    assert (g.u[0], g.v[0]) == (0, 1)
    assert g.w[0] == pytest.approx(math.exp(-0.5))


def test_knn_matches_brute_force_and_stays_in_cluster(rng):
    centers = np.array([[-50.0, 0.0], [50.0, 0.0]])
    labels = np.repeat([0, 1], 15)
    X = class_features(labels, 2, noise_std=1.0, seed=4, centers=centers).X
    nbrs = knn_indices(X, 4)
    for i in range(30):
        d = [(np.sum((X[i] - X[j]) ** 2), j) for j in range(30) if j != i]
        assert sorted(nbrs[i]) == sorted(j for _, j in sorted(d)[:4])
        assert np.all(labels[nbrs[i]] == labels[i])


def test_knn_ties_go_to_smaller_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    assert list(knn_indices(X, 2)[0]) == [1, 2]


def test_geometric_rejects_large_k():
    with pytest.raises(ValueError):
        generate_geometric_knn(2, 2, 3, 4)


# ---- class features --------------------------------------------------------


def test_zero_noise_rows_identical():
    labels = np.array([0, 0, 1, 1, 1])
    X = class_features(labels, 4, noise_std=0.0, seed=1).X
    assert np.array_equal(X[0], X[1])
    assert np.array_equal(X[2], X[4])


def test_zero_center_scale_means_concentrate():
    labels = np.repeat(np.arange(3), 80)
    X = class_features(labels, 6, center_scale=0.0, noise_std=1.0, seed=2).X
    for c in range(3):
        assert np.linalg.norm(X[labels == c].mean(axis=0)) <= 5.0 / math.sqrt(80)


def test_sign_separable_classes():
    labels = np.repeat([0, 1], 50)
    X = class_features(labels, 1, noise_std=0.1, seed=3, centers=[[1.0], [-1.0]]).X
    assert np.all((X[:, 0] > 0) == (labels == 0))


def test_class_features_rejects_zero_dim():
    with pytest.raises(ValueError):
        class_features(np.array([0, 1]), 0)


# ---- Laplacians ------------------------------------------------------------


def test_triangle_and_path_laplacians():
    np.testing.assert_array_equal(laplacian(unit_triangle()).matrix, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    np.testing.assert_array_equal(laplacian(unit_path()).matrix, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_normalized_triangle_spectrum():
    w = np.linalg.eigvalsh(laplacian(unit_triangle(), "normalized").matrix)
    np.testing.assert_allclose(w, [0, 1.5, 1.5], atol=1e-12)


def test_normalized_isolated_node_has_zero_diagonal():
    g = WeightedGraph.from_edges(3, [(0, 1, 2.0)])
    assert laplacian(g, "normalized").matrix[2, 2] == 0.0


def test_operator_rejects_asymmetric():
    with pytest.raises(ValueError):
        GraphOperator(np.array([[1.0, 0.5], [0.0, 1.0]]), "combinatorial")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 15))
def test_quadratic_form_identity(seed, n):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, n)
    L = laplacian(g)
    L.check_invariants()
    x = rng.standard_normal(n)
    direct = np.sum(g.w * (x[g.u] - x[g.v]) ** 2)
    assert x @ L.matrix @ x == pytest.approx(direct, rel=1e-9)


# ---- scaling ---------------------------------------------------------------


def test_scale_triangle():
    S = scale_operator(laplacian(unit_triangle()))
    assert S.scale == pytest.approx(3.0)
    assert S.kind == "scaled"
    assert operator_norm(S) == pytest.approx(1.0)


def test_scaled_norm_is_one(rng):
    for _ in range(10):
        S = scale_operator(laplacian(random_connected_graph(rng, 9)))
        assert abs(operator_norm(S) - 1.0) <= 1e-9


def test_external_scale_reused():
    dense = scale_operator(laplacian(unit_triangle()))
    sparse = scale_operator(laplacian(unit_path()), dense.scale)
    assert sparse.scale == dense.scale
    assert operator_norm(sparse) == pytest.approx(1.0)  # path norm is 3, so it lands on 1
    sparse2 = scale_operator(laplacian(WeightedGraph.from_edges(3, [(0, 1, 1.0)])), dense.scale)
    assert operator_norm(sparse2) != pytest.approx(1.0)


def test_scale_rejects_zero_operator():
    with pytest.raises(ValueError):
        scale_operator(laplacian(WeightedGraph.from_edges(2, [])))


# ---- file format -----------------------------------------------------------


def test_round_trip_is_bit_exact(tmp_path, rng):
    g = random_connected_graph(rng, 12)
    write_graph(g, tmp_path / "g.txt")
    assert read_graph(tmp_path / "g.txt").same_structure(g)


def test_parse_path_graph():
    g = parse_graph("n=3\n0 1 1.0\n1 2 2.0\n")
    assert g.edges == [(0, 1, 1.0), (1, 2, 2.0)]


def test_parse_skips_comments_and_blank_lines():
    g = parse_graph("# header comment\nn=2\n\n# edge\n0 1 0.25\n")
    assert g.edges == [(0, 1, 0.25)]


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("n=3\n2 2 1.0\n", 2),
        ("n=3\n0 1 1.0\n0 1 2.0\n", 3),
        ("n=3\n0 1 0\n", 2),
        ("n=3\n0 1 -2.5\n", 2),
        ("n=3\n0 5 1.0\n", 2),
        ("n=3\n1 0 1.0\n", 2),
        ("n=3\n0 1\n", 2),
        ("0 1 1.0\n", 1),
    ],
)
def test_parse_errors_carry_line_numbers(text, lineno):
    with pytest.raises(GraphFormatError) as info:
        parse_graph(text)
    assert info.value.lineno == lineno


def test_self_loop_message():
    with pytest.raises(GraphFormatError, match="self-loop"):
        parse_graph("n=3\n2 2 1.0\n")
