import itertools

import numpy as np
import pytest

from stclust.banded import (
    BandedSPD,
    band_back_solve,
    band_cholesky,
    band_forward_solve,
    band_solve,
    factor_logdet,
)
from stclust.panel import AdjacencyGraph
from stclust.simulate import rook_grid_graph
from stclust.spatial import (
    apply_permutation,
    graph_bandwidth,
    leroux_precision,
    reverse_cuthill_mckee,
)

from conftest import path_graph, random_graph


class TestBanded:
    def test_round_trip_dense(self, rng):
        a = np.zeros((5, 5))
        a[np.arange(5), np.arange(5)] = rng.uniform(2, 3, 5)
        a[np.arange(4) + 1, np.arange(4)] = 0.5
        a[np.arange(4), np.arange(4) + 1] = 0.5
        m = BandedSPD.from_dense(a)
        assert m.bandwidth == 1
        assert np.allclose(m.to_dense(), a)

    def test_matvec_and_quad_form(self, rng):
        a = rng.standard_normal((6, 6))
        a = a @ a.T + 6 * np.eye(6)
        a[np.abs(np.subtract.outer(np.arange(6), np.arange(6))) > 2] = 0.0
        m = BandedSPD.from_dense(a)
        v = rng.standard_normal(6)
        assert np.allclose(m.matvec(v), a @ v)
        mat = rng.standard_normal((6, 3))
        assert np.allclose(m.matvec(mat), a @ mat)
        assert np.isclose(m.quad_form(v), v @ a @ v)

    def test_offdiag_row(self, rng):
        g = rook_grid_graph(3, 3)
        q = leroux_precision(0.7, g)
        dense = q.to_dense()
        for i in range(9):
            idx, vals = q.offdiag_row(i)
            row = np.zeros(9)
            row[idx] = vals
            expected = dense[i].copy()
            expected[i] = 0.0
            assert np.allclose(row, expected)

    def test_cholesky_identity(self):
        m = BandedSPD.from_dense(np.eye(4))
        f = band_cholesky(m)
        assert f.is_factor
        assert np.allclose(f.to_dense(), np.eye(4))

    def test_cholesky_two_by_two(self):
        m = BandedSPD.from_dense(np.array([[4.0, 2.0], [2.0, 5.0]]))
        f = band_cholesky(m)
        assert np.allclose(f.to_dense(), [[2.0, 0.0], [1.0, 2.0]])

    def test_cholesky_indefinite(self):
        m = BandedSPD.from_dense(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError, match="positive definite"):
            band_cholesky(m)

    def test_cholesky_random_band_matrices(self, rng):
        for _ in range(25):
            n = int(rng.integers(2, 51))
            b = int(rng.integers(0, min(n, 6)))
            a = np.zeros((n, n))
            for d in range(1, b + 1):
                vals = rng.standard_normal(n - d)
                a[np.arange(n - d) + d, np.arange(n - d)] = vals
                a[np.arange(n - d), np.arange(n - d) + d] = vals
            a[np.arange(n), np.arange(n)] = np.abs(a).sum(axis=1) + rng.uniform(
                0.5, 2.0, n
            )
            m = BandedSPD.from_dense(a, bandwidth=b)
            f = band_cholesky(m)
            ld = f.to_dense()
            assert np.abs(ld @ ld.T - a).max() < 1e-10

    def test_solves_and_logdet(self, rng):
        g = rook_grid_graph(4, 4)
        q = leroux_precision(0.8, g)
        f = band_cholesky(q)
        dense = q.to_dense()
        rhs = rng.standard_normal(16)
        assert np.allclose(band_solve(f, rhs), np.linalg.solve(dense, rhs))
        lower = np.linalg.cholesky(dense)
        assert np.allclose(band_forward_solve(f, rhs), np.linalg.solve(lower, rhs))
        assert np.allclose(band_back_solve(f, rhs), np.linalg.solve(lower.T, rhs))
        assert np.isclose(factor_logdet(f), np.linalg.slogdet(dense)[1])


def bandwidth_after(graph, order):
    return graph_bandwidth(apply_permutation(graph, order))


class TestReverseCuthillMckee:
    def test_path_already_ordered(self):
        g = path_graph(6)
        order = reverse_cuthill_mckee(g)
        assert bandwidth_after(g, order) == 1

    def test_three_node_path_relabeled(self):
        # edges (0,2),(2,1): bandwidth 2; optimum over all 3! orderings is 1
        g = AdjacencyGraph.from_edges(3, [(0, 2), (2, 1)])
        assert graph_bandwidth(g) == 2
        best = min(
            bandwidth_after(g, np.array(p)) for p in itertools.permutations(range(3))
        )
        order = reverse_cuthill_mckee(g)
        assert bandwidth_after(g, order) == best == 1

    def test_grid_bandwidth(self):
        g = rook_grid_graph(10, 10)
        order = reverse_cuthill_mckee(g)
        assert bandwidth_after(g, order) <= 10  # row-major baseline

    def test_never_worse_than_original(self, rng):
        for _ in range(20):
            g = random_graph(int(rng.integers(2, 12)), rng)
            order = reverse_cuthill_mckee(g)
            assert bandwidth_after(g, order) <= graph_bandwidth(g)
            # determinism
            assert np.array_equal(order, reverse_cuthill_mckee(g))

    def test_empty_graph_identity(self):
        g = AdjacencyGraph.from_edges(4, [])
        assert np.array_equal(np.sort(reverse_cuthill_mckee(g)), np.arange(4))

    def test_disconnected_components(self):
        g = AdjacencyGraph.from_edges(6, [(0, 5), (1, 3)])
        order = reverse_cuthill_mckee(g)
        assert sorted(order.tolist()) == list(range(6))
        assert bandwidth_after(g, order) == 1

    def test_permutation_composes(self):
        g = rook_grid_graph(2, 3)
        order = reverse_cuthill_mckee(g)
        g2 = apply_permutation(g, order)
        # permutation maps band positions back to original unit indices
        assert np.array_equal(g2.permutation, order)
        back = apply_permutation(g2, np.argsort(order))
        assert back.edges == g.edges
        assert np.array_equal(back.permutation, np.arange(6))


class TestLerouxPrecision:
    def test_rho_zero_identity(self):
        g = rook_grid_graph(3, 3)
        q = leroux_precision(0.0, g)
        assert np.allclose(q.to_dense(), np.eye(9))

    def test_two_nodes(self):
        g = AdjacencyGraph.from_edges(2, [(0, 1)])
        q = leroux_precision(0.5, g)
        assert np.allclose(q.to_dense(), [[1.0, -0.5], [-0.5, 1.0]])

    def test_rho_one_rejected(self):
        g = path_graph(3)
        with pytest.raises(ValueError, match="ICAR"):
            leroux_precision(1.0, g)
        with pytest.raises(ValueError):
            leroux_precision(-0.2, g)

    def test_positive_definite_small_graphs(self, rng):
        for _ in range(30):
            g = random_graph(int(rng.integers(2, 9)), rng)
            rho = rng.uniform(0.0, 0.999)
            q = leroux_precision(rho, g)
            assert np.linalg.eigvalsh(q.to_dense()).min() > 0

    def test_row_sums(self, rng):
        for _ in range(10):
            g = random_graph(int(rng.integers(2, 10)), rng)
            rho = rng.uniform(0.0, 0.999)
            q = leroux_precision(rho, g)
            assert np.allclose(q.to_dense().sum(axis=1), 1.0 - rho, atol=1e-12)

    def test_matches_dense_formula(self, rng):
        g = random_graph(7, rng)
        rho = 0.63
        w = np.zeros((7, 7))
        for a, b in g.edges:
            w[a, b] = w[b, a] = 1.0
        expected = rho * (np.diag(w.sum(axis=1)) - w) + (1 - rho) * np.eye(7)
        assert np.allclose(leroux_precision(rho, g).to_dense(), expected)

    def test_isolated_node(self):
        g = AdjacencyGraph.from_edges(3, [(0, 1)])
        q = leroux_precision(0.4, g)
        assert np.isclose(q.to_dense()[2, 2], 0.6)
