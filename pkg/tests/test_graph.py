import numpy as np
import pytest
import scipy.sparse as sp
from conftest import make_dataset
from hypothesis import given, settings
from hypothesis import strategies as st

from laplora.errors import ShapeError, ValidationError
from laplora.graph import (
    SparseMatrix,
    adjacency,
    normalized_laplacian,
    propagation_operator,
    spmm,
    symmetrize,
)


def random_graph(rng, n, p):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return make_dataset(n, np.stack([iu[keep], ju[keep]], axis=1))


class TestSymmetrize:
    def test_reversed_pair_deduplicated(self):
        assert symmetrize([(0, 1), (1, 0)], 2).tolist() == [[0, 1]]

    def test_empty(self):
        assert symmetrize([], 3).shape == (0, 2)

    def test_canonical_order(self):
        assert symmetrize([(2, 0), (0, 1)], 3).tolist() == [[0, 1], [0, 2]]

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            symmetrize([(0, 3)], 3)

    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=30))
    def test_membership(self, pairs):
        out = {tuple(p) for p in symmetrize(pairs, 8).tolist()}
        expected = {(min(u, v), max(u, v)) for u, v in pairs}
        assert out == expected
        assert sorted(out) == [tuple(p) for p in symmetrize(pairs, 8).tolist()]


class TestSparseMatrix:
    def test_rejects_unsorted_row(self):
        with pytest.raises(ValidationError):
            SparseMatrix(1, 3, [0, 2], [2, 0], [1.0, 1.0])

    def test_rejects_bad_offsets(self):
        with pytest.raises(ValidationError):
            SparseMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ShapeError):
            SparseMatrix(1, 2, [0, 1], [0, 1], [1.0])

    def test_empty_rows_allowed(self):
        m = SparseMatrix(3, 3, [0, 0, 1, 1], [2], [5.0])
        assert m.to_dense()[1, 2] == 5.0

    def test_dense_round_trip(self, rng):
        d = rng.standard_normal((4, 5)) * (rng.random((4, 5)) < 0.4)
        np.testing.assert_array_equal(SparseMatrix.from_dense(d).to_dense(), d)


class TestLaplacian:
    def test_k2(self, k2):
        lap = normalized_laplacian(k2).to_dense()
        np.testing.assert_array_equal(lap, [[1.0, -1.0], [-1.0, 1.0]])
        np.testing.assert_allclose(np.linalg.eigvalsh(lap), [0.0, 2.0], atol=1e-14)

    def test_single_isolated_node(self):
        assert normalized_laplacian(make_dataset(1, [])).to_dense().tolist() == [[1.0]]

    def test_isolated_node_row(self):
        lap = normalized_laplacian(make_dataset(3, [(0, 1)])).to_dense()
        np.testing.assert_array_equal(lap[2], [0.0, 0.0, 1.0])

    def test_triangle(self, k3):
        vals = np.linalg.eigvalsh(normalized_laplacian(k3).to_dense())
        np.testing.assert_allclose(vals, [0.0, 1.5, 1.5], atol=1e-14)

    def test_self_loop_renormalization(self, k2):
        lap = normalized_laplacian(k2, self_loops=True).to_dense()
        # A + I for K2 is all ones, degree 2
        np.testing.assert_allclose(lap, np.eye(2) - 0.5 * np.ones((2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 40), st.floats(0.0, 1.0), st.integers(0, 2**31))
    def test_exactly_symmetric_and_bounded(self, n, p, seed):
        g = random_graph(np.random.default_rng(seed), n, p)
        lap = normalized_laplacian(g).to_dense()
        assert np.max(np.abs(lap - lap.T)) == 0.0
        vals = np.linalg.eigvalsh(lap)
        assert vals.min() >= -1e-10 and vals.max() <= 2 + 1e-10

    def test_degree_scaled_constant_is_null_vector(self, rng):
        # a path plus random chords is connected
        n = 30
        edges = [(i, i + 1) for i in range(n - 1)] + [tuple(rng.choice(n, 2, replace=False)) for _ in range(20)]
        g = make_dataset(n, edges)
        deg = np.asarray(adjacency(g).to_scipy().sum(axis=1)).ravel()
        v = np.sqrt(deg)
        r = spmm(normalized_laplacian(g), v)
        assert np.linalg.norm(r) <= 1e-10


class TestPropagation:
    def test_k2(self):
        s = propagation_operator(SparseMatrix.from_dense([[1.0, -1.0], [-1.0, 1.0]]))
        np.testing.assert_array_equal(s.to_dense(), [[0.0, 1.0], [1.0, 0.0]])

    def test_identity_gives_zero(self):
        s = propagation_operator(SparseMatrix.identity(4))
        np.testing.assert_array_equal(s.to_dense(), np.zeros((4, 4)))

    def test_zero_gives_identity(self):
        zero = SparseMatrix(3, 3, [0, 0, 0, 0], [], [])
        np.testing.assert_array_equal(propagation_operator(zero).to_dense(), np.eye(3))

    def test_pattern_is_laplacian_plus_diagonal(self, k3):
        lap = normalized_laplacian(k3)
        s = propagation_operator(lap)
        assert s.nnz == lap.nnz  # K3's Laplacian already has a full diagonal

    def test_non_square(self):
        with pytest.raises(ShapeError):
            propagation_operator(SparseMatrix.from_dense(np.ones((2, 3))))


class TestSpmm:
    def test_identity(self, rng):
        x = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(spmm(SparseMatrix.identity(4), x), x)

    def test_zero(self, rng):
        zero = SparseMatrix(4, 4, [0] * 5, [], [])
        np.testing.assert_array_equal(spmm(zero, rng.standard_normal((4, 2))), np.zeros((4, 2)))

    def test_random_against_dense(self, rng):
        d = rng.standard_normal((5, 5)) * (rng.random((5, 5)) < 0.5)
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(spmm(SparseMatrix.from_dense(d), x), d @ x, rtol=1e-12, atol=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 50), st.integers(1, 6), st.integers(0, 2**31))
    def test_property_against_dense(self, n, f, seed):
        r = np.random.default_rng(seed)
        d = sp.random(n, n, density=0.2, random_state=r).toarray()
        x = r.standard_normal((n, f))
        got = spmm(SparseMatrix.from_dense(d), x)
        ref = d @ x
        scale = np.abs(d) @ np.abs(x) + 1e-300
        assert np.all(np.abs(got - ref) <= 1e-12 * scale)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            spmm(SparseMatrix.identity(3), np.ones((4, 2)))

    def test_deterministic(self, rng):
        d = sp.random(60, 60, density=0.3, random_state=1).toarray()
        x = rng.standard_normal((60, 8))
        m = SparseMatrix.from_dense(d)
        assert spmm(m, x).tobytes() == spmm(m, x).tobytes()
