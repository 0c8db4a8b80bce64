import math

import numpy as np
import pytest
import scipy.sparse as sp

from randqb import (
    MatrixHandle,
    RowStream,
    StopRule,
    Termination,
    ToleranceBelowFloorError,
    adaptive_range_finder,
    explicit_error,
    optimal_error,
    optimal_rank,
    rand_qb,
    rand_qb_b,
    rand_qb_ei,
    rand_qb_fp,
    rand_qb_fp_fixed_rank,
    row_truncate,
    single_pass_fp,
    single_pass_hmt,
    sparse_random,
    validate_epsilon,
)
from randqb.kernel import DimensionError, orthogonality_loss


def _check_qb(A, f, tol=1e-10):
    """Q orthonormal and B == Q.T @ A."""
    dense = A.toarray() if sp.issparse(A) else A
    assert orthogonality_loss(f.Q) < tol
    np.testing.assert_allclose(f.B, f.Q.T @ dense, atol=tol * np.linalg.norm(dense))


class TestValidateEpsilon:
    def test_floor_value(self):
        check = validate_epsilon(1.0, 1.0, 0.01)
        assert check.floor == pytest.approx(math.sqrt(4 * 2.0**-53 / 0.01))
        assert f"{check.floor:.3e}" == "2.107e-07"

    def test_strict_inequality(self):
        floor = validate_epsilon(1.0, 3.0).floor
        assert not validate_epsilon(floor, 3.0).valid
        assert validate_epsilon(floor * (1 + 1e-12), 3.0).valid

    def test_floor_raises_in_algorithms(self, matrix2_300):
        with pytest.raises(ToleranceBelowFloorError):
            rand_qb_ei(matrix2_300.matrix, StopRule.fixed_precision(1e-9, relative=True))
        with pytest.raises(ToleranceBelowFloorError):
            rand_qb_fp(matrix2_300.matrix, 1e-9, relative=True)


class TestRandQb:
    @pytest.mark.parametrize("P", [0, 1, 2])
    def test_factorization(self, matrix2_300, P):
        A = matrix2_300.matrix
        f = rand_qb(A, 40, P, rng=0)
        _check_qb(A, f)
        assert f.rank == 40 and f.passes == 2 + 2 * P

    def test_exact_on_low_rank(self, rng):
        A = rng.standard_normal((80, 5)) @ rng.standard_normal((5, 60))
        f = rand_qb(A, 5, rng=1)
        np.testing.assert_allclose(f.Q @ f.B, A, atol=1e-11)

    def test_rank_collapse_drops_columns(self, rng):
        A = rng.standard_normal((80, 5)) @ rng.standard_normal((5, 60))
        f = rand_qb(A, 12, rng=1)
        assert f.terminated_by is Termination.RANK_COLLAPSE
        assert f.rank == 5
        np.testing.assert_allclose(f.Q @ f.B, A, atol=1e-11)

    def test_sparse_input(self):
        A = sparse_random(200, 0.05, rng=3)
        f = rand_qb(A, 20, 1, rng=0)
        _check_qb(A, f)

    @pytest.mark.parametrize("l", [0, 301])
    def test_bad_rank(self, matrix2_300, l):
        with pytest.raises(DimensionError):
            rand_qb(matrix2_300.matrix, l)

    def test_power_helps_slow_decay(self, matrix1_200):
        A = matrix1_200.matrix
        e0 = explicit_error(A, rand_qb(A, 30, 0, rng=2))
        e1 = explicit_error(A, rand_qb(A, 30, 1, rng=2))
        assert e1 < e0


class TestBlocked:
    @pytest.mark.parametrize("alg", ["b", "ei", "fp"])
    @pytest.mark.parametrize("k,b", [(30, 10), (25, 10), (7, 3)])
    def test_fixed_rank(self, matrix2_300, alg, k, b):
        A = matrix2_300.matrix
        if alg == "b":
            f = rand_qb_b(A, StopRule.fixed_rank(k), b, rng=0)
        elif alg == "ei":
            f = rand_qb_ei(A, StopRule.fixed_rank(k), b, rng=0)
        else:
            f = rand_qb_fp_fixed_rank(A, k, 0, b, rng=0)
        _check_qb(A, f)
        assert f.rank == k
        assert f.terminated_by is Termination.RANK_REACHED

    def test_indicator_tracks_error(self, matrix2_300):
        A = matrix2_300.matrix
        f = rand_qb_ei(A, StopRule.fixed_rank(40), 10, rng=0)
        assert f.error_indicator == pytest.approx(explicit_error(A, f) ** 2, rel=1e-6)
        assert [r for r, _ in f.history] == [10, 20, 30, 40]

    def test_qb_b_indicator_is_residual(self, matrix2_300):
        A = matrix2_300.matrix
        f = rand_qb_b(A, StopRule.fixed_precision(1e-3, relative=True), 10, rng=0)
        assert f.error_indicator == pytest.approx(explicit_error(A, f) ** 2, rel=1e-10)

    @pytest.mark.parametrize("alg", ["b", "ei", "fp"])
    @pytest.mark.parametrize("eps", [1e-2, 1e-4])
    def test_fixed_precision(self, matrix2_300, alg, eps):
        A = matrix2_300.matrix
        stop = StopRule.fixed_precision(eps, relative=True)
        if alg == "b":
            f = rand_qb_b(A, stop, 10, rng=0, row_refine=True)
        elif alg == "ei":
            f = rand_qb_ei(A, stop, 10, 1, rng=0)
        else:
            f = rand_qb_fp(A, eps, 10, 1, rng=0, relative=True)
        assert f.terminated_by is Termination.TOLERANCE_MET
        assert explicit_error(A, f) < eps * np.linalg.norm(A)
        k_opt = optimal_rank(matrix2_300.spectrum, eps)
        assert k_opt <= f.rank <= k_opt + 10

    def test_absolute_tolerance(self, matrix2_300):
        A = matrix2_300.matrix
        eps = 1e-3 * np.linalg.norm(A)
        f = rand_qb_ei(A, StopRule.fixed_precision(eps), 10, rng=0)
        assert explicit_error(A, f) < eps

    def test_trivial_tolerance_gives_empty(self, matrix2_300):
        f = rand_qb_fp(matrix2_300.matrix, 2.0, relative=True, rng=0)
        assert f.rank == 0 and f.terminated_by is Termination.TOLERANCE_MET

    def test_fp_without_reorth_loses_orthogonality(self, matrix2_300):
        # fast decay makes the G/H recovery lose orthogonality without the second projection
        A = matrix2_300.matrix
        with_re = rand_qb_fp_fixed_rank(A, 150, 0, 10, reorth=True, rng=0)
        without = rand_qb_fp_fixed_rank(A, 150, 0, 10, reorth=False, rng=0)
        assert orthogonality_loss(with_re.Q) < orthogonality_loss(without.Q)

    def test_fp_restart(self, matrix1_200):
        A = matrix1_200.matrix
        f = rand_qb_fp(A, 1e-3, b=10, l_budget=20, rng=0, relative=True)
        assert f.terminated_by is Termination.TOLERANCE_MET
        assert f.rank > 20
        assert explicit_error(A, f) < 1e-3 * np.linalg.norm(A)
        _check_qb(A, f, tol=1e-9)

    def test_fp_budget_exhausted(self, matrix1_200):
        f = rand_qb_fp(matrix1_200.matrix, 1e-4, b=10, l_budget=20, max_restarts=0, rng=0, relative=True)
        assert f.terminated_by is Termination.SKETCH_EXHAUSTED
        assert f.rank == 20

    def test_rank_deficient_collapse(self, rng):
        A = rng.standard_normal((100, 13)) @ rng.standard_normal((13, 90))
        for f in (rand_qb_ei(A, StopRule.fixed_rank(40), 10, rng=0),
                  rand_qb_b(A, StopRule.fixed_rank(40), 10, rng=0),
                  rand_qb_fp_fixed_rank(A, 40, 0, 10, rng=0)):
            assert f.terminated_by is Termination.RANK_COLLAPSE
            assert f.rank == 13
            np.testing.assert_allclose(f.Q @ f.B, A, atol=1e-9 * np.linalg.norm(A))

    def test_sparse_blocked(self):
        A = sparse_random(300, 0.02, rng=4)
        f = rand_qb_ei(A, StopRule.fixed_rank(30), 10, 1, rng=0)
        _check_qb(A, f)

    def test_row_truncate(self, rng):
        Q = np.linalg.qr(rng.standard_normal((20, 5)))[0]
        B = np.diag([4.0, 3.0, 2.0, 1.0, 0.5]) @ rng.standard_normal((5, 10)) / np.sqrt(10)
        total = float(np.sum(B**2)) + 0.01
        eps = math.sqrt(float(np.sum(B[3:] ** 2)) + 0.01) * 1.0001
        f = row_truncate(Q, B, total, eps)
        assert f.rank == 3 and f.terminated_by is Termination.TOLERANCE_MET


class TestSinglePass:
    def test_stream_matches_block_mode(self, matrix2_300):
        A = matrix2_300.matrix
        om = np.random.default_rng(0).standard_normal((300, 40))
        s = single_pass_fp(RowStream.from_matrix(A), 40, 10, omega=om)
        d = rand_qb_fp_fixed_rank(A, 40, 0, 10, omega=om)
        assert s.passes == 1 and d.passes == 2
        np.testing.assert_allclose(s.Q @ s.B, d.Q @ d.B, atol=1e-10 * np.linalg.norm(A))

    def test_stream_consumed_once(self, matrix2_300):
        stream = RowStream.from_matrix(matrix2_300.matrix)
        single_pass_fp(stream, 20, 10, rng=0)
        assert stream.consumptions == 1

    def test_tolerance(self, matrix2_300):
        A = matrix2_300.matrix
        f = single_pass_fp(A, 100, 10, rng=0, tol=1e-3, relative=True)
        assert f.terminated_by is Termination.TOLERANCE_MET
        assert explicit_error(A, f) < 1e-3 * np.linalg.norm(A)

    def test_power_rejected_for_stream(self, matrix2_300):
        with pytest.raises(ValueError):
            rand_qb_fp_fixed_rank(MatrixHandle(RowStream.from_matrix(matrix2_300.matrix)), 10, P=1)

    def test_hmt(self, matrix2_300):
        A = matrix2_300.matrix
        h = single_pass_hmt(A, 60, rng=0)
        assert h.passes == 1 and h.rank == 60
        assert orthogonality_loss(h.Q) < 1e-12 and orthogonality_loss(h.Q_tilde) < 1e-12
        qb = h.as_qb()
        assert qb.error_indicator == -1.0
        # coarser than the two-pass methods but still a useful approximation
        assert explicit_error(A, qb) < 0.05 * np.linalg.norm(A)

    def test_hmt_exact_on_low_rank(self, rng):
        A = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 50))
        h = single_pass_hmt(RowStream.from_matrix(A), 8, rng=0)
        np.testing.assert_allclose(h.Q @ h.B_hat @ h.Q_tilde.T, A, atol=1e-8 * np.linalg.norm(A))


class TestRangeFinder:
    def test_spectral_bound(self, matrix1_200):
        A = matrix1_200.matrix
        tol = 1e-3 * np.linalg.norm(A, 2)
        f = adaptive_range_finder(A, tol, rng=0)
        assert f.terminated_by is Termination.TOLERANCE_MET
        assert np.linalg.norm(A - f.Q @ f.B, 2) < tol
        assert orthogonality_loss(f.Q) < 1e-12

    def test_relative_mode_frobenius(self, matrix2_300):
        A = matrix2_300.matrix
        f = adaptive_range_finder(A, 1e-3, rng=0, relative=True)
        assert explicit_error(A, f) < 1e-3 * np.linalg.norm(A)
        assert f.error_indicator == pytest.approx(explicit_error(A, f) ** 2, rel=1e-4)

    def test_max_rank(self, matrix1_200):
        f = adaptive_range_finder(matrix1_200.matrix, 1e-12, rng=0, max_rank=15)
        assert f.rank == 15 and f.terminated_by is Termination.SKETCH_EXHAUSTED


class TestEckartYoung:
    @pytest.mark.parametrize("seed", range(3))
    def test_no_algorithm_beats_optimum(self, matrix1_200, seed):
        A, sigma = matrix1_200.matrix, matrix1_200.spectrum
        for f in (rand_qb(A, 25, 1, rng=seed), rand_qb_ei(A, StopRule.fixed_rank(25), 5, 1, rng=seed),
                  rand_qb_fp_fixed_rank(A, 25, 0, 5, rng=seed), single_pass_fp(A, 25, 5, rng=seed)):
            assert explicit_error(A, f) >= optimal_error(sigma, f.rank) - 1e-10


class TestFloorConvention:
    def test_unit_delta(self):
        # unit roundoff 2**-53: 2*sqrt(eps) at delta=1
        assert validate_epsilon(1.0, 1.0, delta=1.0).floor == pytest.approx(2.107e-8, rel=1e-3)
