import io

import numpy as np
import pytest

from soprolab.errors import InvariantViolation, ParameterError, ParseError
from soprolab.topology import (
    Graph,
    build_random_connected_graph,
    laplacian_weights,
    read_edge_list,
    spectral_summary,
    write_edge_list,
)


def bfs_connected(n, edges):
    # Independent connectivity oracle.
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(seen) == n


def test_paper_scale_graph_20_nodes_degree_5():
    g = build_random_connected_graph(20, 5.0, seed=0)
    assert g.n_agents == 20
    assert g.n_edges == 50
    assert g.average_degree == 5.0
    assert bfs_connected(20, g.edges)


def test_two_nodes_single_edge():
    g = build_random_connected_graph(2, 1.0, seed=3)
    assert g.edges == ((0, 1),)


def test_connected_over_many_seeds():
    for seed in range(100):
        g = build_random_connected_graph(10, 3.0, seed=seed)
        assert g.n_edges == 15
        assert bfs_connected(10, g.edges)


def test_builder_deterministic_per_seed():
    a = build_random_connected_graph(15, 4.0, seed=42)
    b = build_random_connected_graph(15, 4.0, seed=42)
    assert a.edges == b.edges
    c = build_random_connected_graph(15, 4.0, seed=43)
    assert a.edges != c.edges


def test_average_degree_within_one_of_target():
    for n, da in [(7, 2.3), (12, 3.7), (30, 6.1)]:
        g = build_random_connected_graph(n, da, seed=1)
        assert abs(g.average_degree - da) <= 1.0


def test_builder_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        build_random_connected_graph(1, 1.0, seed=0)
    with pytest.raises(ParameterError):
        build_random_connected_graph(5, 5.0, seed=0)  # needs 13 > 10 edges
    with pytest.raises(ParameterError):
        build_random_connected_graph(10, 0.5, seed=0)  # 3 < 9 edges, disconnected


def test_graph_invariants_enforced():
    with pytest.raises(ParameterError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(ParameterError):
        Graph.from_edges(3, [(0, 3)])
    with pytest.raises(ParameterError):
        Graph.from_edges(4, [(0, 1), (2, 3)])  # disconnected
    g = Graph.from_edges(3, [(0, 1), (1, 2), (1, 0)])  # duplicate collapses
    assert g.n_edges == 2
    for i in range(3):
        for j in g.neighbors[i]:
            assert i in g.neighbors[j]


def test_laplacian_two_nodes():
    g = Graph.from_edges(2, [(0, 1)])
    p = laplacian_weights(g, 1.0)
    assert np.array_equal(p.matrix, np.array([[1.0, -1.0], [-1.0, 1.0]]))


def test_laplacian_triangle():
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    p = laplacian_weights(g, 1.0)
    expected = np.array([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])
    assert np.array_equal(p.matrix, expected)


def test_laplacian_rows_sum_to_zero():
    for seed in range(10):
        g = build_random_connected_graph(12, 3.5, seed=seed)
        weights = {e: 0.5 + (i % 5) for i, e in enumerate(g.edges)}
        p = laplacian_weights(g, weights)
        fro = np.linalg.norm(p.matrix)
        assert np.linalg.norm(p.matrix @ np.ones(12)) <= 1e-12 * fro


def test_laplacian_rejects_nonpositive_weight():
    g = Graph.from_edges(2, [(0, 1)])
    with pytest.raises(ParameterError):
        laplacian_weights(g, 0.0)
    with pytest.raises(ParameterError):
        laplacian_weights(g, {(0, 1): -2.0})
    with pytest.raises(ParameterError):
        laplacian_weights(g, {})


def test_spectral_two_nodes():
    p = laplacian_weights(Graph.from_edges(2, [(0, 1)]), 1.0)
    s = spectral_summary(p)
    assert abs(s.lambda_w - 2.0) <= 1e-10
    assert abs(s.lambda_max - 2.0) <= 1e-10


def test_spectral_triangle():
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    s = spectral_summary(laplacian_weights(g, 1.0))
    assert abs(s.lambda_w - 3.0) <= 1e-10
    assert abs(s.lambda_max - 3.0) <= 1e-10


def test_spectral_scales_with_weights():
    g = build_random_connected_graph(9, 3.0, seed=5)
    s1 = spectral_summary(laplacian_weights(g, 1.0))
    s3 = spectral_summary(laplacian_weights(g, 3.0))
    assert abs(s3.lambda_w - 3.0 * s1.lambda_w) <= 1e-9 * s3.lambda_max
    assert abs(s3.lambda_max - 3.0 * s1.lambda_max) <= 1e-9 * s3.lambda_max


def test_spectral_rejects_bad_matrices():
    g = Graph.from_edges(2, [(0, 1)])
    p = laplacian_weights(g, 1.0)
    bad = p.matrix.copy()
    bad.setflags(write=True)
    bad[0, 1] = 5.0
    broken = type(p)(graph=g, matrix=bad, weights=dict(p.weights))
    with pytest.raises(InvariantViolation):
        spectral_summary(broken)
    neg = -p.matrix.copy()
    indefinite = type(p)(graph=g, matrix=neg, weights=dict(p.weights))
    with pytest.raises(InvariantViolation):
        spectral_summary(indefinite)


def test_positive_semidefinite_on_random_vectors():
    rng = np.random.default_rng(0)
    g = build_random_connected_graph(10, 3.0, seed=2)
    p = laplacian_weights(g, 1.0)
    lam_w = spectral_summary(p).lambda_w
    for _ in range(1000):
        x = rng.standard_normal(10)
        quad = x @ p.matrix @ x
        assert quad >= -1e-12 * (x @ x)
        # restricted positivity away from the constant vector
        assert quad > 1e-10 * lam_w * (x @ x)


def test_single_zero_eigenvalue():
    for seed in range(20):
        g = build_random_connected_graph(8, 2.8, seed=seed)
        p = laplacian_weights(g, 1.0)
        eigs = np.linalg.eigvalsh(p.matrix)
        assert np.count_nonzero(eigs <= 1e-10 * eigs[-1]) == 1


def test_disagreement_matches_kronecker_product():
    rng = np.random.default_rng(1)
    g = build_random_connected_graph(6, 2.5, seed=9)
    weights = {e: 0.2 + i * 0.3 for i, e in enumerate(g.edges)}
    p = laplacian_weights(g, weights)
    d = 4
    x = rng.standard_normal((6, d))
    w_full = np.kron(p.matrix, np.eye(d))
    expected = (w_full @ x.ravel()).reshape(6, d)
    got = p.disagreement(x)
    scale = np.max(np.abs(expected)) + 1.0
    assert np.max(np.abs(got - expected)) <= 1e-12 * scale
    # and the hand-written per-agent neighbor sum
    for i in range(6):
        acc = np.zeros(d)
        for j in g.neighbors[i]:
            acc += p.weights[(min(i, j), max(i, j))] * (x[i] - x[j])
        assert np.max(np.abs(got[i] - acc)) <= 1e-12 * scale


def test_edge_list_round_trip():
    g = build_random_connected_graph(7, 2.6, seed=4)
    weights = {e: 1.0 + 0.1 * i for i, e in enumerate(g.edges)}
    p = laplacian_weights(g, weights)
    buf = io.StringIO()
    write_edge_list(p, buf)
    back = read_edge_list(io.StringIO(buf.getvalue()))
    assert back.graph.edges == g.edges
    assert np.array_equal(back.matrix, p.matrix)


def test_edge_list_parse_errors():
    with pytest.raises(ParseError):
        read_edge_list(io.StringIO(""))
    with pytest.raises(ParseError):
        read_edge_list(io.StringIO("2\n0 1 1.0\n"))
    with pytest.raises(ParseError):
        read_edge_list(io.StringIO("2 1\n0 1\n"))
    with pytest.raises(ParseError):
        read_edge_list(io.StringIO("2 2\n0 1 1.0\n"))  # wrong edge count
    err = None
    try:
        read_edge_list(io.StringIO("2 1\n0 x 1.0\n"))
    except ParseError as e:
        err = e
    assert err is not None and err.line == 2


def test_matrix_is_immutable():
    p = laplacian_weights(Graph.from_edges(2, [(0, 1)]), 1.0)
    with pytest.raises(ValueError):
        p.matrix[0, 0] = 7.0
