import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from oracles import brute_force_knn_edges, classical_theta
from uvhl.errors import ConstructionError, SingularityError
from uvhl.hypergraph import build_incidence, knn_hyperedges, theta


def random_graph(seed, n=12, k=3, groups=2):
    rng = np.random.default_rng(seed)
    edge_groups = {f"g{g}": knn_hyperedges(rng.normal(size=(n, 3)), k) for g in range(groups)}
    return edge_groups, rng.uniform(0.05, 1.0, n)


class TestKnnHyperedges:
    def test_collinear_tie_goes_to_lower_index(self):
        edges = knn_hyperedges(np.arange(4.0)[:, None], 1)
        assert [e.tolist() for e in edges] == [[0, 1], [1, 0], [2, 1], [3, 2]]

    def test_argument_errors(self):
        X = np.zeros((4, 2))
        with pytest.raises(ValueError):
            knn_hyperedges(X, 4)
        with pytest.raises(ValueError):
            knn_hyperedges(X, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 15), st.integers(1, 4), st.integers(0, 10_000))
    def test_matches_brute_force(self, n, d, seed):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 4, size=(n, d)).astype(float)  # many exact ties
        k = int(rng.integers(1, n))
        edges = knn_hyperedges(X, k)
        assert len(edges) == n
        assert [e.tolist() for e in edges] == brute_force_knn_edges(X, k)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(3, 15), st.integers(0, 10_000))
    def test_permutation_equivariance(self, n, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 2))
        perm = rng.permutation(n)
        base = knn_hyperedges(X, 2)
        permuted = knn_hyperedges(X[perm], 2)
        for p in range(n):
            assert set(perm[permuted[p]].tolist()) == set(base[perm[p]].tolist())


class TestBuildIncidence:
    def test_binary_for_unit_weights(self):
        edges, _ = random_graph(0)
        hg = build_incidence(edges, np.ones(12))
        assert set(np.unique(hg.H.toarray()).tolist()) == {0.0, 1.0}

    def test_single_edge_column(self):
        hg = build_incidence([[[0, 1]]], np.array([0.5, 0.8, 0.9]), allow_isolated=True)
        assert hg.H.toarray()[:, 0].tolist() == [0.5, 0.8, 0.0]
        with pytest.raises(ConstructionError, match="vertex 2"):
            build_incidence([[[0, 1]]], np.array([0.5, 0.8, 0.9]))
        with pytest.raises(SingularityError):
            theta(hg)

    def test_two_groups_count(self):
        X = np.random.default_rng(0).normal(size=(4, 2))
        hg = build_incidence({"a": knn_hyperedges(X, 1), "b": knn_hyperedges(X[:, ::-1], 1)}, np.ones(4))
        assert hg.m == 8
        assert hg.edge_groups == ("a",) * 4 + ("b",) * 4

    def test_degrees(self):
        edges, u = random_graph(1)
        w = np.random.default_rng(2).uniform(0.5, 2.0, 24)
        hg = build_incidence(edges, u, edge_weights=w)
        H = hg.H.toarray()
        np.testing.assert_allclose(hg.dv, H @ w)
        np.testing.assert_allclose(hg.de, H.sum(axis=0))

    def test_doubling_a_weight_doubles_its_row(self):
        edges, u = random_graph(3)
        u2 = u.copy()
        u2[4] *= 2
        a, b = build_incidence(edges, u).H.toarray(), build_incidence(edges, u2).H.toarray()
        np.testing.assert_array_equal(b[4], 2 * a[4])
        np.testing.assert_array_equal(np.delete(b, 4, 0), np.delete(a, 4, 0))

    def test_duplicates_are_kept(self):
        hg = build_incidence([[[0, 1], [1, 0]]], np.ones(2))
        assert hg.m == 2

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            build_incidence([[]], np.ones(2))
        with pytest.raises(ValueError):
            build_incidence([[[0, 5]]], np.ones(2))
        with pytest.raises(ValueError):
            build_incidence([[[0, 1]]], np.ones(2), edge_weights=[0.0])

    def test_incidence_dump(self, tmp_path):
        hg = build_incidence([[[0, 1], [1, 2]]], np.array([0.5, 0.25, 1.0]))
        hg.dump_incidence(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines == ["row,col,value", "0,0,0.5", "1,0,0.25", "1,1,0.25", "2,1,1.0"]


class TestTheta:
    def test_two_vertex_example(self):
        np.testing.assert_allclose(theta(build_incidence([[[0, 1]]], np.ones(2))), 0.5 * np.ones((2, 2)),
                                   rtol=0, atol=1e-15)

    def test_matches_loop_oracle_for_unit_weights(self):
        edges, _ = random_graph(4)
        flat = [e for g in edges.values() for e in g]
        np.testing.assert_allclose(theta(build_incidence(edges, np.ones(12))), classical_theta(flat, 12),
                                   rtol=0, atol=1e-14)

    def test_weighted_matches_dense_formula(self):
        edges, u = random_graph(5)
        hg = build_incidence(edges, u)
        H = hg.H.toarray()
        dv, de = H.sum(axis=1), H.sum(axis=0)
        dense = np.diag(dv ** -0.5) @ H @ np.diag(1 / de) @ H.T @ np.diag(dv ** -0.5)
        np.testing.assert_allclose(theta(hg), dense, atol=1e-14)

    def test_degree_identity(self):
        edges, _ = random_graph(6)
        hg = build_incidence(edges, np.ones(12))
        s = np.sqrt(hg.dv)
        np.testing.assert_allclose((s[:, None] * theta(hg) * s[None, :]) @ np.ones(12), hg.dv, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 25), st.integers(1, 3), st.integers(0, 10_000))
    def test_symmetric_and_spectrum(self, n, groups, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, n))
        edges = [knn_hyperedges(rng.normal(size=(n, 2)), k) for _ in range(groups)]
        T = theta(build_incidence(edges, rng.uniform(0.01, 1, n)))
        assert np.max(np.abs(T - T.T)) <= 1e-12
        eig = np.linalg.eigvalsh(theta(build_incidence(edges, np.ones(n))))
        assert eig.min() >= -1 - 1e-9 and eig.max() <= 1 + 1e-9

    def test_sparse_incidence(self):
        edges, u = random_graph(7)
        assert sparse.issparse(build_incidence(edges, u).H)
