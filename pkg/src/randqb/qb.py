"""Randomized QB factorizations ``A ~= Q @ B`` with ``Q`` orthonormal and ``B = Q.T @ A``.

Algorithms
----------
rand_qb
    one-shot sketch ``Y = A @ Omega`` (optionally power-iterated), ``B = Q.T @ A``.
rand_qb_b
    blocked Gram-Schmidt variant that keeps an explicit residual ``A - Q @ B``.
rand_qb_ei
    blocked variant tracking the Frobenius error through the indicator
    ``E = ||A||_F^2 - ||B||_F^2``; no residual is formed.
rand_qb_fp_fixed_rank, rand_qb_fp
    pass-efficient variant: ``G = A @ Omega`` and ``H = A.T @ G`` are formed up
    front and every block of ``B`` is recovered from them by a triangular solve.
single_pass_fp
    the pass-efficient variant fed by a row stream (one read of ``A``).
single_pass_hmt
    the older single-pass scheme ``A ~= Q @ B_hat @ Q_tilde.T`` used as a baseline.
adaptive_range_finder
    vector-by-vector range finder with the probabilistic spectral-norm stop rule.

Every routine accepts a dense array, a sparse matrix, or a
:class:`~randqb.kernel.MatrixHandle`; the returned ``passes`` is the number of
passes over ``A`` the call itself consumed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .kernel import (
    EPS_MACH,
    RANK_THRESHOLD,
    DimensionError,
    MatrixHandle,
    RowStream,
    SingularMatrixError,
    as_handle,
    gaussian,
    make_rng,
    orth,
    orth_qr,
    sum_squares,
    tri_solve_transposed,
)


class Termination(str, Enum):
    RANK_REACHED = "rank_reached"
    TOLERANCE_MET = "tolerance_met"
    SKETCH_EXHAUSTED = "sketch_exhausted"
    RANK_COLLAPSE = "rank_collapse"


class ToleranceBelowFloorError(ValueError):
    """The requested tolerance is too small for the error indicator to be trusted."""

    def __init__(self, eps, floor):
        self.eps = eps
        self.floor = floor
        super().__init__(f"tolerance {eps:.3e} is not above the error-indicator floor {floor:.3e}")


@dataclass(frozen=True)
class QBFactorization:
    Q: np.ndarray
    B: np.ndarray
    #: ``||A||_F^2 - ||B||_F^2``, or -1.0 when the algorithm does not track it
    error_indicator: float
    passes: int
    terminated_by: Termination
    #: ``||A||_F^2`` when the algorithm computed it
    norm_sq: float | None = None
    #: ``(rank, E)`` after each completed block
    history: tuple = ()

    @property
    def rank(self) -> int:
        return self.Q.shape[1]

    @property
    def shape(self):
        return self.Q.shape[0], self.B.shape[1]


@dataclass(frozen=True)
class StopRule:
    """Either a target rank ``k`` (plus oversampling ``s``) or a Frobenius tolerance ``eps``.

    ``eps`` is absolute unless ``relative`` is set, in which case the algorithm
    scales it by ``||A||_F`` (which it computes anyway for the error indicator).
    """

    k: int | None = None
    s: int = 0
    eps: float | None = None
    relative: bool = False

    def __post_init__(self):
        if (self.k is None) == (self.eps is None):
            raise ValueError("a stop rule is either fixed-rank or fixed-precision")
        if self.k is not None and (self.k < 1 or self.s < 0):
            raise ValueError(f"fixed-rank rule needs k >= 1 and s >= 0, got k={self.k}, s={self.s}")
        if self.eps is not None and not self.eps > 0:
            raise ValueError(f"tolerance must be positive, got {self.eps}")

    @classmethod
    def fixed_rank(cls, k: int, s: int = 0) -> StopRule:
        return cls(k=k, s=s)

    @classmethod
    def fixed_precision(cls, eps: float, relative: bool = False) -> StopRule:
        return cls(eps=eps, relative=relative)

    @property
    def is_fixed_rank(self) -> bool:
        return self.k is not None


class EpsilonCheck(NamedTuple):
    valid: bool
    floor: float


def validate_epsilon(eps: float, frob_A: float, delta: float = 0.01) -> EpsilonCheck:
    """Check ``eps > sqrt(4 * eps_mach / delta) * ||A||_F``.

    Below this floor the computed indicator may have relative error above
    ``delta`` because of cancellation in ``||A||_F^2 - ||B||_F^2``.
    """
    floor = math.sqrt(4.0 * EPS_MACH / delta) * frob_A
    return EpsilonCheck(eps > floor, floor)


def error_indicator_init(A) -> float:
    """``E = ||A||_F^2`` (one pass)."""
    return as_handle(A).frob_norm_sq()


def error_indicator_update(E: float, B_i: np.ndarray) -> float:
    return E - sum_squares(B_i)


def _rows_until(B_i, E, eps2):
    """Subtract row energies of ``B_i`` from ``E`` until it drops below ``eps2``.

    Returns ``(rows_kept, E_after)``; ``rows_kept`` is None if never crossed.
    """
    for j, row in enumerate(B_i):
        E -= float(np.dot(row, row))
        if E < eps2:
            return j + 1, E
    return None, E


def row_truncate(Q, B, E_initial: float, eps: float, passes: int = 0) -> QBFactorization:
    """Keep the fewest leading rows of ``B`` (columns of ``Q``) meeting ``E < eps**2``.

    ``E_initial`` is ``||A||_F^2``; the indicator is decreased row by row.  If
    the tolerance is never reached all rows are kept and the result is flagged
    ``sketch_exhausted``.
    """
    eps2 = eps * eps
    if E_initial < eps2:
        return QBFactorization(Q[:, :0], B[:0], E_initial, passes, Termination.TOLERANCE_MET, E_initial)
    keep, E = _rows_until(B, E_initial, eps2)
    if keep is None:
        return QBFactorization(Q, B, E, passes, Termination.SKETCH_EXHAUSTED, E_initial)
    return QBFactorization(Q[:, :keep], B[:keep], E, passes, Termination.TOLERANCE_MET, E_initial)


def _usable_columns(R, ref_scale):
    """Leading columns of a QR factor whose diagonal has not collapsed.

    A diagonal entry is collapsed when it is below ``RANK_THRESHOLD`` times the
    larger of the block's largest diagonal and ``ref_scale`` (the column scale
    of the sketch before deflation).
    """
    d = np.abs(np.diag(R))
    if d.size == 0:
        return 0
    cut = RANK_THRESHOLD * max(d.max(), ref_scale)
    bad = np.flatnonzero(d <= cut)
    return int(bad[0]) if bad.size else d.size


def _col_scale(Y):
    return float(np.sqrt((Y * Y).sum(axis=0)).max()) if Y.size else 0.0


def _resolve_eps(stop_eps, relative, norm_sq, delta, validate=True):
    frob = math.sqrt(norm_sq)
    eps = stop_eps * frob if relative else stop_eps
    if validate:
        check = validate_epsilon(eps, frob, delta)
        if not check.valid:
            raise ToleranceBelowFloorError(eps, check.floor)
    return eps * eps


def _check_rank(l, m, n):
    if l < 1 or l > min(m, n):
        raise DimensionError(f"sketch size {l} must lie in [1, min(m, n) = {min(m, n)}]")


def _empty(m, n):
    return np.zeros((m, 0)), np.zeros((0, n))


class _Accumulator:
    """Growing ``Q``/``B`` pair; blocks are stored in lists and stacked on demand."""

    def __init__(self, m, n):
        self.m, self.n = m, n
        self._q, self._b = [], []
        self.Q, self.B = _empty(m, n)
        self.history = []

    @property
    def cols(self):
        return self.Q.shape[1]

    def append(self, Q_i, B_i, E=None):
        if Q_i.shape[1] == 0:
            return
        self._q.append(Q_i)
        self._b.append(B_i)
        self.Q = np.hstack(self._q) if len(self._q) > 1 else Q_i
        self.B = np.vstack(self._b) if len(self._b) > 1 else B_i
        self.history.append((self.cols, E if E is not None else -1.0))

    def result(self, E, passes, term, norm_sq=None):
        Q = np.ascontiguousarray(self.Q)
        B = np.ascontiguousarray(self.B)
        return QBFactorization(Q, B, float(E), int(passes), Termination(term), norm_sq, tuple(self.history))


# ---------------------------------------------------------------------------
# randQB
# ---------------------------------------------------------------------------

def rand_qb(A, l: int, P: int = 0, rng=None, omega: np.ndarray | None = None) -> QBFactorization:
    """Basic randomized QB with ``P`` power iterations (``2 + 2P`` passes).

    ``Q`` is re-orthonormalized after every application of ``A`` and ``A.T``.
    Columns whose QR diagonal collapsed (numerical rank below ``l``) are dropped
    and the result is flagged ``rank_collapse``.
    """
    A = as_handle(A)
    m, n = A.shape
    _check_rank(l, m, n)
    start = A.passes
    if omega is None:
        omega = gaussian(n, l, make_rng(rng))
    Y = A.matmul(omega)
    scale = _col_scale(Y)
    Q, R = orth_qr(Y)
    for _ in range(P):
        Z = orth(A.rmatmul(Q))
        Y = A.matmul(Z)
        scale = _col_scale(Y)
        Q, R = orth_qr(Y)
    keep = _usable_columns(R, scale)
    term = Termination.RANK_REACHED
    if keep < Q.shape[1]:
        good = np.abs(np.diag(R)) > RANK_THRESHOLD * max(np.abs(np.diag(R)).max(), scale)
        Q = Q[:, good]
        term = Termination.RANK_COLLAPSE
    B = A.rmatmul(Q).T
    return QBFactorization(np.ascontiguousarray(Q), np.ascontiguousarray(B), -1.0, A.passes - start, term)


# ---------------------------------------------------------------------------
# randQB_b: explicit residual
# ---------------------------------------------------------------------------

def rand_qb_b(A, stop: StopRule, b: int = 10, rng=None, row_refine: bool = False,
              delta: float = 0.01) -> QBFactorization:
    """Blocked randQB maintaining the residual ``A - Q @ B`` explicitly.

    Works on a dense copy of ``A`` (sparse inputs are densified).  Each block
    costs 4 passes: sketch, ``B_i``, and the read+write residual overwrite.  In
    fixed-precision mode an extra initial pass computes ``||A||_F``.  The
    reported ``error_indicator`` is the exact squared residual norm.

    With ``row_refine`` the final block is trimmed row by row, as in
    :func:`rand_qb_ei`; by default the rank is a multiple of ``b``.
    """
    A = as_handle(A)
    m, n = A.shape
    if b < 1:
        raise ValueError("block size must be positive")
    rng = make_rng(rng)
    start = A.passes
    try:
        R = A.dense_copy()
    except MemoryError as exc:
        raise MemoryError(f"no memory for a {m}x{n} residual copy") from exc

    acc = _Accumulator(m, n)
    eps2 = None
    norm_sq = None
    E = -1.0
    if stop.is_fixed_rank:
        lmax = stop.k + stop.s
        _check_rank(lmax, m, n)
    else:
        lmax = min(m, n)
        norm_sq = E = R.frob_norm_sq()
        eps2 = _resolve_eps(stop.eps, stop.relative, norm_sq, delta)
        if E < eps2:
            return acc.result(E, A.passes - start, Termination.TOLERANCE_MET, norm_sq)

    scale = None
    term = Termination.RANK_REACHED if stop.is_fixed_rank else Termination.SKETCH_EXHAUSTED
    while acc.cols < lmax:
        bi = min(b, lmax - acc.cols)
        Y = R.matmul(gaussian(n, bi, rng))
        if scale is None:
            scale = _col_scale(Y)
        Q_i, R_i = orth_qr(Y)
        keep = _usable_columns(R_i, scale)
        if keep == 0:
            term = Termination.RANK_COLLAPSE
            break
        Q_i = Q_i[:, :keep]
        Q_i = orth(Q_i - acc.Q @ (acc.Q.T @ Q_i))
        B_i = R.rmatmul(Q_i).T
        E_before = E
        E = R.subtract_product(Q_i, B_i)
        if eps2 is not None and E < eps2:
            if row_refine:
                rows, E = _rows_until(B_i, E_before, eps2)
                rows = B_i.shape[0] if rows is None else rows
                Q_i, B_i = Q_i[:, :rows], B_i[:rows]
            acc.append(Q_i, B_i, E)
            term = Termination.TOLERANCE_MET
            break
        acc.append(Q_i, B_i, E)
        if keep < bi:
            term = Termination.RANK_COLLAPSE
            break
    return acc.result(E, A.passes - start, term, norm_sq)


# ---------------------------------------------------------------------------
# randQB_EI: error indicator, no residual
# ---------------------------------------------------------------------------

def rand_qb_ei(A, stop: StopRule, b: int = 10, P: int = 0, rng=None, row_refine: bool = True,
               delta: float = 0.01) -> QBFactorization:
    """Blocked randQB with the Frobenius error indicator.

    Passes: 1 for ``||A||_F^2`` plus ``2 + 2P`` per block.  With ``P > 0`` each
    block's sketch is refined by subspace iteration on the deflated operator
    ``A - Q @ B`` (applied implicitly), orthonormalizing between applications.
    In fixed-precision mode the block that crosses the tolerance is trimmed
    row by row unless ``row_refine`` is off.
    """
    A = as_handle(A)
    m, n = A.shape
    if b < 1:
        raise ValueError("block size must be positive")
    rng = make_rng(rng)
    start = A.passes
    norm_sq = E = error_indicator_init(A)
    acc = _Accumulator(m, n)

    eps2 = None
    if stop.is_fixed_rank:
        lmax = stop.k + stop.s
        _check_rank(lmax, m, n)
        term = Termination.RANK_REACHED
    else:
        lmax = min(m, n)
        eps2 = _resolve_eps(stop.eps, stop.relative, norm_sq, delta)
        term = Termination.SKETCH_EXHAUSTED
        if E < eps2:
            return acc.result(E, A.passes - start, Termination.TOLERANCE_MET, norm_sq)

    while acc.cols < lmax:
        bi = min(b, lmax - acc.cols)
        Q, B = acc.Q, acc.B
        omega = gaussian(n, bi, rng)
        G = A.matmul(omega)
        scale = _col_scale(G)
        Y = G - Q @ (B @ omega)
        for _ in range(P):
            Z = orth(Y)
            W = A.rmatmul(Z) - B.T @ (Q.T @ Z)
            Z = orth(W)
            G = A.matmul(Z)
            scale = _col_scale(G)
            Y = G - Q @ (B @ Z)
        Q_i, R_i = orth_qr(Y)
        keep = _usable_columns(R_i, scale)
        if keep == 0:
            term = Termination.RANK_COLLAPSE
            break
        Q_i = orth(Q_i[:, :keep] - Q @ (Q.T @ Q_i[:, :keep]))
        B_i = A.rmatmul(Q_i).T
        E_before = E
        E = error_indicator_update(E, B_i)
        if eps2 is not None and E < eps2:
            if row_refine:
                rows, E = _rows_until(B_i, E_before, eps2)
                rows = B_i.shape[0] if rows is None else rows
                Q_i, B_i = Q_i[:, :rows], B_i[:rows]
            acc.append(Q_i, B_i, E)
            term = Termination.TOLERANCE_MET
            break
        acc.append(Q_i, B_i, E)
        if keep < bi:
            term = Termination.RANK_COLLAPSE
            break
    return acc.result(E, A.passes - start, term, norm_sq)


# ---------------------------------------------------------------------------
# randQB_FP: pass-efficient
# ---------------------------------------------------------------------------

def _fp_sweep(acc, omega, G, H, E, b, lmax, eps2, reorth, row_refine):
    """Consume the columns of a precomputed sketch block by block.

    Returns ``(E, termination)``; termination is None when the sketch ran out
    before the rank cap or tolerance was reached.
    """
    l = omega.shape[1]
    for lo in range(0, l, b):
        if acc.cols >= lmax:
            return E, Termination.RANK_REACHED
        hi = min(lo + b, l, lo + lmax - acc.cols)
        Q, B = acc.Q, acc.B
        om_i, G_i, H_i = omega[:, lo:hi], G[:, lo:hi], H[:, lo:hi]
        B_om = B @ om_i
        Y = G_i - Q @ B_om
        Q_i, R_i = orth_qr(Y)
        keep = _usable_columns(R_i, _col_scale(G_i))
        if keep == 0:
            return E, Termination.RANK_COLLAPSE
        Q_i, R_i = Q_i[:, :keep], R_i[:keep, :keep]
        Y, B_om, H_i = Y[:, :keep], B_om[:, :keep], H_i[:, :keep]
        if reorth:
            Q_i, R_t = orth_qr(Q_i - Q @ (Q.T @ Q_i))
            R_i = R_t @ R_i
            C = H_i.T - (Y.T @ Q) @ B - B_om.T @ B
        else:
            C = H_i.T - B_om.T @ B
        try:
            B_i = tri_solve_transposed(R_i, C)
        except SingularMatrixError:
            return E, Termination.RANK_COLLAPSE
        E_before = E
        E = error_indicator_update(E, B_i)
        if eps2 is not None and E < eps2:
            if row_refine:
                rows, E = _rows_until(B_i, E_before, eps2)
                rows = B_i.shape[0] if rows is None else rows
                Q_i, B_i = Q_i[:, :rows], B_i[:rows]
            acc.append(Q_i, B_i, E)
            return E, Termination.TOLERANCE_MET
        acc.append(Q_i, B_i, E)
        if keep < hi - lo:
            return E, Termination.RANK_COLLAPSE
    if acc.cols >= lmax:
        return E, Termination.RANK_REACHED
    return E, None


def rand_qb_fp_fixed_rank(A, k: int, s: int = 0, b: int = 10, reorth: bool = True, rng=None,
                          omega: np.ndarray | None = None, P: int = 0) -> QBFactorization:
    """Pass-efficient fixed-rank QB: ``G = A @ Omega``, ``H = A.T @ G``, then no access to ``A``.

    Costs ``2 + 2P`` passes (1 when ``A`` is a row stream, where ``P`` must be 0).
    ``||A||_F^2`` is accumulated in the same sweep as ``G``, so the error
    indicator is tracked for free.
    """
    A = as_handle(A)
    m, n = A.shape
    l = k + s
    _check_rank(l, m, n)
    if b < 1:
        raise ValueError("block size must be positive")
    if A.kind == "stream" and P > 0:
        raise ValueError("a row stream allows no power iterations (P must be 0)")
    start = A.passes
    if omega is None:
        omega = gaussian(n, l, make_rng(rng))
    for _ in range(P):
        omega = orth(A.rmatmul(orth(A.matmul(omega))))
    G, H, norm_sq = A.gram_sketch(omega)
    acc = _Accumulator(m, n)
    E, term = _fp_sweep(acc, omega, G, H, norm_sq, b, l, None, reorth, False)
    return acc.result(E, A.passes - start, term or Termination.RANK_REACHED, norm_sq)


def rand_qb_fp(A, eps: float, b: int = 10, P: int = 0, l_budget: int | None = None, rng=None,
               relative: bool = False, max_restarts: int = 8, row_refine: bool = True,
               delta: float = 0.01) -> QBFactorization:
    """Pass-efficient fixed-precision QB with power scheme.

    A sketch of ``l_budget`` columns (default ``50 * b``) is power-iterated
    ``P`` times, then ``G`` and ``H`` are formed; blocks are extracted until
    ``E < eps**2``.  If the sketch runs out first, a fresh ``Omega`` is drawn
    from an independent substream and the procedure continues against the
    accumulated ``Q``, ``B`` (power iterations on the restart act on the
    deflated operator ``A - Q @ B``).

    Passes without restart: ``2 + 2P``; each restart adds ``2 + 2P``.
    ``||A||_F^2`` is fused into the first ``A @ Omega`` sweep.
    """
    A = as_handle(A)
    m, n = A.shape
    if b < 1:
        raise ValueError("block size must be positive")
    if not eps > 0:
        raise ValueError(f"tolerance must be positive, got {eps}")
    if A.kind == "stream" and P > 0:
        raise ValueError("a row stream allows no power iterations (P must be 0)")
    lmax = min(m, n)
    l_budget = 50 * b if l_budget is None else l_budget
    if l_budget < 1:
        raise ValueError("sketch budget must be positive")
    rng = make_rng(rng)
    start = A.passes
    acc = _Accumulator(m, n)
    E = norm_sq = eps2 = None

    for attempt in range(max_restarts + 1):
        if acc.cols >= lmax:
            break
        if attempt and A.kind == "stream":
            break
        gen = rng if attempt == 0 else rng.spawn(1)[0]
        l = min(l_budget, lmax - acc.cols)
        omega = gaussian(n, l, gen)
        Q, B = acc.Q, acc.B
        for _ in range(P):
            G = orth(A.matmul(omega) - Q @ (B @ omega))
            omega = orth(A.rmatmul(G) - B.T @ (Q.T @ G))
        if norm_sq is None:
            G, H, norm_sq = A.gram_sketch(omega)
            E = norm_sq
            eps2 = _resolve_eps(eps, relative, norm_sq, delta)
            if E < eps2:
                return acc.result(E, A.passes - start, Termination.TOLERANCE_MET, norm_sq)
        else:
            G = A.matmul(omega)
            H = A.rmatmul(G)
        E, term = _fp_sweep(acc, omega, G, H, E, b, lmax, eps2, True, row_refine)
        if term is Termination.RANK_REACHED:
            term = Termination.SKETCH_EXHAUSTED
        if term is not None:
            return acc.result(E, A.passes - start, term, norm_sq)
    return acc.result(E, A.passes - start, Termination.SKETCH_EXHAUSTED, norm_sq)


# ---------------------------------------------------------------------------
# single-pass variants
# ---------------------------------------------------------------------------

def _stream_handle(stream):
    if isinstance(stream, MatrixHandle):
        return stream
    if isinstance(stream, RowStream):
        return MatrixHandle(stream)
    return MatrixHandle(RowStream.from_matrix(stream))


def single_pass_fp(stream, l: int, b: int = 10, rng=None, tol: float | None = None,
                   relative: bool = False, omega: np.ndarray | None = None,
                   delta: float = 0.01) -> QBFactorization:
    """Pass-efficient QB from one read of a row stream.

    ``G``, ``H = sum_i outer(A[i], G[i])`` and ``||A||_F^2`` are accumulated
    while the rows go by; the block loop (with re-orthogonalization) then runs
    without touching ``A``.  With ``tol`` the output is trimmed once the error
    indicator drops below it.
    """
    A = _stream_handle(stream)
    m, n = A.shape
    _check_rank(l, m, n)
    start = A.passes
    if omega is None:
        omega = gaussian(n, l, make_rng(rng))
    G, H, norm_sq = A.gram_sketch(omega)
    eps2 = None
    acc = _Accumulator(m, n)
    if tol is not None:
        eps2 = _resolve_eps(tol, relative, norm_sq, delta)
        if norm_sq < eps2:
            return acc.result(norm_sq, A.passes - start, Termination.TOLERANCE_MET, norm_sq)
    E, term = _fp_sweep(acc, omega, G, H, norm_sq, b, l, eps2, True, tol is not None)
    if term is None:
        term = Termination.RANK_REACHED if eps2 is None else Termination.SKETCH_EXHAUSTED
    return acc.result(E, A.passes - start, term, norm_sq)


@dataclass(frozen=True)
class HMTFactorization:
    """Three-factor approximation ``A ~= Q @ B_hat @ Q_tilde.T``."""

    Q: np.ndarray
    B_hat: np.ndarray
    Q_tilde: np.ndarray
    passes: int
    condition: float = field(default=float("nan"))

    @property
    def rank(self):
        return self.Q.shape[1]

    def as_qb(self) -> QBFactorization:
        return QBFactorization(self.Q, self.B_hat @ self.Q_tilde.T, -1.0, self.passes, Termination.RANK_REACHED)


def single_pass_hmt(stream, l: int, rng=None, cond_warn: float = 1e12) -> HMTFactorization:
    """Baseline single-pass scheme with sketches from both sides.

    ``Y = A @ Omega`` and ``Y_t = A.T @ Omega_t`` are collected in one read,
    ``Q = orth(Y)``, ``Q_t = orth(Y_t)``, and the core ``B_hat ~= Q.T @ A @ Q_t``
    is the least-squares solution of ``Q_t.T @ Y_t = B_hat.T @ (Q.T @ Omega_t)``.
    """
    A = _stream_handle(stream)
    m, n = A.shape
    _check_rank(l, m, n)
    rng = make_rng(rng)
    start = A.passes
    omega = gaussian(n, l, rng)
    omega_t = gaussian(m, l, rng)
    if A.kind == "stream":
        Y = np.empty((m, l))
        Y_t = np.zeros((n, l))
        for i, row in enumerate(A._data):
            Y[i] = row @ omega
            Y_t += np.outer(row, omega_t[i])
        A.counter.add(1)
    else:
        # both products read each entry once; charged as one sweep
        Y = np.asarray(A.data @ omega)
        Y_t = np.asarray(A.data.T @ omega_t)
        A.counter.add(1)
    Q = orth(Y)
    Q_t = orth(Y_t)
    X = Q.T @ omega_t
    rhs = Q_t.T @ Y_t
    cond = float(np.linalg.cond(X))
    if not cond < cond_warn:
        warnings.warn(f"ill-conditioned core system (cond = {cond:.2e}); using minimum-norm least squares",
                      RuntimeWarning, stacklevel=2)
    B_hat = np.linalg.lstsq(X.T, rhs.T, rcond=None)[0]
    return HMTFactorization(Q, B_hat, Q_t, A.passes - start, cond)


# ---------------------------------------------------------------------------
# adaptive randomized range finder
# ---------------------------------------------------------------------------

def adaptive_range_finder(A, tol_spectral: float, r: int = 10, rng=None, relative: bool = False,
                          max_rank: int | None = None) -> QBFactorization:
    """Grow ``Q`` one vector at a time until ``r`` consecutive residual samples are small.

    Stops once the last ``r`` projected samples ``||(I - Q Q^T) A w||`` are all
    below ``tol_spectral / (10 sqrt(2/pi))``, which bounds the spectral error
    by ``tol_spectral`` with probability ``1 - 10**-r``.  ``B = Q.T @ A`` is
    formed at the end.  Passes: ``r`` initial samples as one block, one per
    added vector, one for ``B`` (plus one for ``||A||_F`` when ``relative``).
    """
    A = as_handle(A)
    m, n = A.shape
    if r < 1:
        raise ValueError("r must be at least 1")
    rng = make_rng(rng)
    start = A.passes
    norm_sq = None
    if relative:
        norm_sq = A.frob_norm_sq()
        tol_spectral = tol_spectral * math.sqrt(norm_sq)
    lmax = min(m, n) if max_rank is None else min(max_rank, m, n)
    thresh = tol_spectral / (10.0 * math.sqrt(2.0 / math.pi))

    samples = A.matmul(gaussian(n, r, rng))
    window = [samples[:, i].copy() for i in range(r)]
    qs = []
    Q = np.zeros((m, 0))
    term = Termination.SKETCH_EXHAUSTED
    while True:
        if max(np.linalg.norm(y) for y in window) <= thresh:
            term = Termination.TOLERANCE_MET
            break
        if len(qs) >= lmax:
            break
        y = window.pop(0)
        for _ in range(2):
            y = y - Q @ (Q.T @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            term = Termination.RANK_COLLAPSE
            break
        q = y / ny
        qs.append(q)
        Q = np.column_stack(qs)
        window = [w - q * np.dot(q, w) for w in window]
        z = A.matmul(gaussian(n, 1, rng))[:, 0]
        window.append(z - Q @ (Q.T @ z))
    B = A.rmatmul(Q).T
    E = norm_sq - float(np.sum(B * B)) if norm_sq is not None else -1.0
    return QBFactorization(np.ascontiguousarray(Q), np.ascontiguousarray(B), E, A.passes - start, term, norm_sq)
