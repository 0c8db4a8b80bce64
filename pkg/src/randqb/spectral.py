"""Turning QB factorizations into truncated SVDs, and reference errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .kernel import MatrixHandle

#: largest dimension the dense SVD oracle accepts by default
ORACLE_CAP = 2000


class OracleCapError(ValueError):
    pass


@dataclass(frozen=True)
class TruncatedSvd:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.S.size

    def reconstruct(self):
        return (self.U * self.S) @ self.V.T


def qb_to_svd(f, k: int | None = None) -> TruncatedSvd:
    """Rank-k SVD of ``Q @ B`` via a dense SVD of the small factor ``B``."""
    Q, B = f.Q, f.B
    k = Q.shape[1] if k is None else k
    if not 0 <= k <= Q.shape[1]:
        raise ValueError(f"k={k} exceeds the factorization rank {Q.shape[1]}")
    U_b, S, Vt = np.linalg.svd(B, full_matrices=False)
    return TruncatedSvd(Q @ U_b[:, :k], S[:k], Vt[:k].T)


def _raw(A):
    if isinstance(A, MatrixHandle):
        return A.data
    return A if sp.issparse(A) else np.asarray(A, dtype=np.float64)


def explicit_error(A, f, block: int = 256) -> float:
    """``||A - Q @ B||_F`` computed over column blocks of ``A``.

    Never forms the full ``m x n`` product.  This is a test oracle: reading ``A``
    here is not charged to a handle's pass counter.
    """
    A = _raw(A)
    Q, B = f.Q, f.B
    if A.shape != (Q.shape[0], B.shape[1]):
        raise ValueError(f"factor shapes {Q.shape} x {B.shape} do not match A {A.shape}")
    if sp.issparse(A):
        A = A.tocsc()
    total = 0.0
    for lo in range(0, A.shape[1], block):
        hi = min(lo + block, A.shape[1])
        blk = A[:, lo:hi]
        blk = blk.toarray() if sp.issparse(blk) else np.array(blk)
        blk -= Q @ B[:, lo:hi]
        total += float(np.sum(blk * blk))
    return float(np.sqrt(total))


def dense_svd_oracle(A, cap: int = ORACLE_CAP) -> TruncatedSvd:
    """Full SVD by LAPACK's divide-and-conquer driver, for tests and rank oracles."""
    A = _raw(A)
    if max(A.shape) > cap:
        raise OracleCapError(f"matrix {A.shape} exceeds the oracle cap {cap}")
    if sp.issparse(A):
        A = A.toarray()
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    return TruncatedSvd(U, S, Vt.T)
