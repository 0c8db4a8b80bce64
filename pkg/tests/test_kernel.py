import threading

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from randqb.kernel import (
    EPS_MACH,
    DimensionError,
    MatrixHandle,
    PassCounter,
    RowStream,
    SingularMatrixError,
    StreamError,
    frob_norm_sq,
    gaussian,
    make_rng,
    matmul,
    orth_qr,
    orthogonality_loss,
    rank_deficiency_report,
    tri_solve_transposed,
)


class TestRng:
    def test_seed_reproducible(self):
        a = gaussian(50, 7, make_rng(3))
        b = gaussian(50, 7, make_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_generator_passthrough(self):
        g = np.random.default_rng(0)
        assert make_rng(g) is g

    def test_blocks_match_single_draw(self):
        full = gaussian(40, 30, make_rng(9))
        g = make_rng(9)
        blocks = np.hstack([gaussian(40, 10, g) for _ in range(3)])
        np.testing.assert_array_equal(full, blocks)

    def test_moments(self):
        x = gaussian(400, 250, make_rng(1))
        assert abs(x.mean()) < 0.01
        assert abs(x.std() - 1.0) < 0.01

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            gaussian(0, 3, make_rng(0))

    def test_eps_mach(self):
        assert EPS_MACH == np.finfo(np.float64).eps / 2


class TestOrthQr:
    @pytest.mark.parametrize("shape", [(10, 10), (50, 7), (300, 40), (5, 1)])
    def test_reconstruction_and_orthogonality(self, shape, rng):
        M = rng.standard_normal(shape)
        Q, R = orth_qr(M)
        np.testing.assert_allclose(Q @ R, M, atol=1e-12 * np.linalg.norm(M))
        assert orthogonality_loss(Q) < 1e-13
        assert np.all(np.diag(R) >= 0)
        np.testing.assert_array_equal(R, np.triu(R))

    def test_matches_lapack_up_to_signs(self, rng):
        M = rng.standard_normal((30, 8))
        Q, R = orth_qr(M)
        Q0, R0 = np.linalg.qr(M)
        s = np.sign(np.diag(R0))
        np.testing.assert_allclose(Q, Q0 * s, atol=1e-13)

    def test_wide_rejected(self, rng):
        with pytest.raises(DimensionError):
            orth_qr(rng.standard_normal((3, 5)))

    def test_empty_block(self):
        Q, R = orth_qr(np.zeros((6, 0)))
        assert Q.shape == (6, 0) and R.shape == (0, 0)

    @settings(max_examples=30, deadline=None)
    @given(m=st.integers(1, 40), n=st.integers(1, 40), seed=st.integers(0, 2**31))
    def test_property_orthonormal(self, m, n, seed):
        if n > m:
            m, n = n, m
        M = np.random.default_rng(seed).standard_normal((m, n))
        Q, R = orth_qr(M)
        assert orthogonality_loss(Q) < 1e-12
        np.testing.assert_allclose(Q @ R, M, atol=1e-11 * max(1.0, np.linalg.norm(M)))


class TestTriangular:
    def test_solve_transposed(self, rng):
        R = np.triu(rng.standard_normal((6, 6))) + 5 * np.eye(6)
        C = rng.standard_normal((6, 4))
        X = tri_solve_transposed(R, C)
        np.testing.assert_allclose(R.T @ X, C, atol=1e-12)

    def test_singular_reports_index(self):
        R = np.diag([1.0, 1.0, 1e-15, 1.0])
        with pytest.raises(SingularMatrixError) as info:
            tri_solve_transposed(R, np.ones((4, 1)))
        assert info.value.index == 2

    def test_rank_deficiency_report(self):
        assert rank_deficiency_report(np.diag([3.0, 1e-13, 1.0, 0.0])) == [1, 3]
        assert rank_deficiency_report(np.zeros((2, 2))) == [0, 1]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tri_solve_transposed(np.eye(3), np.ones((4, 1)))


class TestPassCounter:
    def test_threads(self):
        c = PassCounter()
        threads = [threading.Thread(target=lambda: [c.add() for _ in range(1000)]) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert c.passes == 4000

    def test_negative(self):
        with pytest.raises(ValueError):
            PassCounter().add(-1)


class TestMatrixHandle:
    @pytest.fixture(params=["dense", "sparse"])
    def pair(self, request, rng):
        A = sp.random(60, 40, density=0.2, random_state=3, format="csr")
        return (A.toarray() if request.param == "dense" else A), A.toarray()

    def test_products_count_passes(self, pair, rng):
        data, dense = pair
        h = MatrixHandle(data)
        X = rng.standard_normal((40, 5))
        np.testing.assert_allclose(h.matmul(X), dense @ X, atol=1e-13)
        np.testing.assert_allclose(h.rmatmul(dense @ X), dense.T @ dense @ X, atol=1e-12)
        assert h.passes == 2
        assert h.frob_norm_sq() == pytest.approx(np.sum(dense**2), rel=1e-14)
        assert h.passes == 3

    def test_gram_sketch_random_access(self, pair, rng):
        data, dense = pair
        h = MatrixHandle(data)
        om = rng.standard_normal((40, 6))
        G, H, fro2 = h.gram_sketch(om)
        np.testing.assert_allclose(H, dense.T @ (dense @ om), atol=1e-12)
        assert fro2 == pytest.approx(np.sum(dense**2), rel=1e-14)
        assert h.passes == 2

    def test_gram_sketch_stream(self, pair, rng):
        data, dense = pair
        stream = RowStream.from_matrix(data)
        h = MatrixHandle(stream)
        om = rng.standard_normal((40, 6))
        G, H, fro2 = h.gram_sketch(om)
        np.testing.assert_allclose(G, dense @ om, atol=1e-13)
        np.testing.assert_allclose(H, dense.T @ (dense @ om), atol=1e-12)
        assert h.passes == 1 and stream.consumptions == 1

    def test_stream_not_random_access(self, rng):
        h = MatrixHandle(RowStream.from_matrix(np.ones((4, 3))))
        with pytest.raises(StreamError):
            h.matmul(np.ones((3, 1)))

    def test_residual_copy(self, rng):
        A = rng.standard_normal((20, 10))
        h = MatrixHandle(A)
        R = h.dense_copy()
        Q = np.linalg.qr(rng.standard_normal((20, 3)))[0]
        B = Q.T @ A
        e = R.subtract_product(Q, B)
        np.testing.assert_allclose(R.data, A - Q @ B)
        assert e == pytest.approx(np.sum((A - Q @ B) ** 2))
        assert h.passes == 2
        np.testing.assert_array_equal(h.data, A)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            MatrixHandle(np.array([[1.0, np.nan]]))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            MatrixHandle(np.ones((3, 4))).matmul(np.ones((3, 1)))

    def test_module_helpers(self, rng):
        A = rng.standard_normal((5, 4))
        X = rng.standard_normal((5, 2))
        np.testing.assert_allclose(matmul(A, X, transpose_A=True), A.T @ X)
        assert frob_norm_sq(sp.csr_matrix(A)) == pytest.approx(np.sum(A**2))


class TestRowStream:
    def test_single_consumption(self):
        s = RowStream.from_matrix(np.arange(6.0).reshape(3, 2))
        rows = list(s)
        assert len(rows) == 3 and s.exhausted
        with pytest.raises(StreamError):
            list(s)

    def test_short_stream(self):
        s = RowStream(3, 2, [np.ones(2), np.ones(2)])
        with pytest.raises(StreamError):
            list(s)

    def test_long_stream(self):
        s = RowStream(1, 2, [np.ones(2), np.ones(2)])
        with pytest.raises(StreamError):
            list(s)

    def test_bad_row_length(self):
        s = RowStream(2, 2, [np.ones(3), np.ones(2)])
        with pytest.raises(StreamError):
            s.next_row()
