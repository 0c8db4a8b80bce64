"""Randomized QB factorization with a Frobenius-norm error indicator."""
from .kernel import (
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
    sum_squares,
    tri_solve_transposed,
)
from .matgen import SpectrumSpec, SyntheticMatrix, optimal_error, optimal_rank, sparse_random, spectrum_values, synthesize
from .qb import (
    HMTFactorization,
    QBFactorization,
    StopRule,
    Termination,
    ToleranceBelowFloorError,
    adaptive_range_finder,
    error_indicator_init,
    error_indicator_update,
    rand_qb,
    rand_qb_b,
    rand_qb_ei,
    rand_qb_fp,
    rand_qb_fp_fixed_rank,
    row_truncate,
    single_pass_fp,
    single_pass_hmt,
    validate_epsilon,
)
from .spectral import TruncatedSvd, dense_svd_oracle, explicit_error, qb_to_svd

__version__ = "0.1.0"
