"""Dense/sparse linear-algebra primitives shared by every QB algorithm.

Dense matrices are plain ``numpy.ndarray`` objects (float64); sparse inputs are
``scipy.sparse.csr_matrix``.  Access to the input matrix goes through a
:class:`MatrixHandle`, which counts passes over the matrix entries:

* one application of ``A`` or ``A.T`` to a block of any width is 1 pass,
* an in-place residual overwrite ``A <- A - Q_i B_i`` is 2 passes (read + write),
* evaluating ``||A||_F`` on its own is 1 pass (it is free when fused into a
  sweep that already reads every entry).

A :class:`RowStream` wraps a matrix revealed one row at a time and may be
consumed exactly once.
"""
from __future__ import annotations

import math
import threading
from collections.abc import Iterable, Iterator

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

#: unit roundoff of IEEE double precision, 2**-53 ~= 1.11e-16
EPS_MACH = 2.0 ** -53

#: default relative threshold for a collapsed QR diagonal entry
RANK_THRESHOLD = 1e-12


class DimensionError(ValueError):
    """Raised when matrix shapes do not satisfy an operation's contract."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A triangular factor has a (near-)zero diagonal entry."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"triangular factor is singular at diagonal index {index} (|R[{index},{index}]| = {value:.3e})")


class StreamError(ValueError):
    """A row stream was consumed twice or yielded the wrong number/length of rows."""


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------

def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator.

    ``seed`` may be an int, a ``SeedSequence`` or an existing ``Generator``
    (returned unchanged so callers can thread one stream through several calls).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def gaussian(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. standard normal ``rows x cols`` matrix, filled column by column.

    Column-major filling means that drawing ``n x b`` blocks one after another
    from the same generator reproduces the columns of a single ``n x l`` draw,
    so blocked and unblocked algorithms can share the same test matrix.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"gaussian matrix needs positive dimensions, got {rows}x{cols}")
    return rng.standard_normal((cols, rows)).T


# ---------------------------------------------------------------------------
# dense kernels
# ---------------------------------------------------------------------------

def orth_qr(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Economic Householder QR with a non-negative diagonal in ``R``."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionError("orth_qr expects a 2-D array")
    m, n = M.shape
    if m < n:
        raise DimensionError(f"orth_qr needs rows >= cols, got {m}x{n}")
    if n == 0:
        return np.zeros((m, 0)), np.zeros((0, 0))
    Q, R = np.linalg.qr(M, mode="reduced")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q *= signs
    R *= signs[:, None]
    return Q, R


def orth(M: np.ndarray) -> np.ndarray:
    return orth_qr(M)[0]


def rank_deficiency_report(R: np.ndarray, threshold: float = RANK_THRESHOLD) -> list[int]:
    """Indices ``j`` with ``|R[j, j]| <= threshold * max_j |R[j, j]|``."""
    d = np.abs(np.diag(R))
    if d.size == 0:
        return []
    top = d.max()
    if top == 0.0:
        return list(range(d.size))
    return [int(j) for j in np.flatnonzero(d <= threshold * top)]


def tri_solve_transposed(R: np.ndarray, C: np.ndarray, threshold: float = RANK_THRESHOLD) -> np.ndarray:
    """Solve ``R.T @ X = C`` for upper-triangular ``R``."""
    R = np.asarray(R, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if R.shape[0] != R.shape[1] or R.shape[0] != C.shape[0]:
        raise DimensionError(f"cannot solve with R {R.shape} and right-hand side {C.shape}")
    bad = rank_deficiency_report(R, threshold)
    if bad:
        j = bad[0]
        raise SingularMatrixError(j, float(abs(R[j, j])))
    if R.shape[0] == 0:
        return C.copy()
    return la.solve_triangular(R, C, trans="T", lower=False, check_finite=False)


def orthogonality_loss(Q: np.ndarray) -> float:
    """``||Q^T Q - I||_inf`` (maximum absolute row sum)."""
    Q = np.asarray(Q)
    if Q.shape[1] == 0:
        return 0.0
    G = Q.T @ Q
    G[np.diag_indices_from(G)] -= 1.0
    return float(np.linalg.norm(G, ord=np.inf))


_CHUNK = 1024


def sum_squares(x) -> float:
    """Sum of squared entries, accurate to about one rounding.

    BLAS partial sums over short chunks are combined with ``math.fsum``.  The
    error indicator subtracts nearly equal quantities, so a plain ``dot`` over
    millions of entries would cost it several percent near the tolerance floor.
    """
    v = x.data if sp.issparse(x) else np.ravel(x)
    k = v.size - v.size % _CHUNK
    head = v[:k].reshape(-1, _CHUNK)
    parts = np.einsum("ij,ij->i", head, head).tolist()
    tail = v[k:]
    parts.append(float(np.dot(tail, tail)))
    return math.fsum(parts)



# ---------------------------------------------------------------------------
# pass accounting and matrix access
# ---------------------------------------------------------------------------

class PassCounter:
    """Thread-safe, monotone count of passes over a matrix."""

    def __init__(self):
        self._passes = 0
        self._lock = threading.Lock()

    def add(self, k: int = 1) -> None:
        if k < 0:
            raise ValueError("pass count cannot decrease")
        with self._lock:
            self._passes += k

    @property
    def passes(self) -> int:
        return self._passes

    def __repr__(self):
        return f"PassCounter(passes={self._passes})"


class RowStream:
    """A matrix revealed row by row, readable exactly once.

    ``source`` is any iterable yielding ``cols``-length rows.
    """

    def __init__(self, rows: int, cols: int, source: Iterable):
        if rows < 1 or cols < 1:
            raise DimensionError(f"row stream needs positive dimensions, got {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        self._it = iter(source)
        self._yielded = 0
        self._started = False
        self.consumptions = 0

    @classmethod
    def from_matrix(cls, A) -> RowStream:
        """Stream the rows of a dense array or sparse matrix."""
        if sp.issparse(A):
            A = sp.csr_matrix(A)
            gen = (A.getrow(i).toarray().ravel() for i in range(A.shape[0]))
        else:
            A = np.asarray(A, dtype=np.float64)
            gen = iter(A)
        return cls(A.shape[0], A.shape[1], gen)

    @property
    def exhausted(self) -> bool:
        return self._yielded == self.rows

    def next_row(self) -> np.ndarray:
        if not self._started:
            self._started = True
            self.consumptions += 1
        if self._yielded >= self.rows:
            raise StreamError(f"row stream already delivered all {self.rows} rows")
        try:
            row = next(self._it)
        except StopIteration:
            raise StreamError(f"row stream ended after {self._yielded} of {self.rows} rows") from None
        row = np.asarray(row, dtype=np.float64).ravel()
        if row.size != self.cols:
            raise StreamError(f"row {self._yielded} has length {row.size}, expected {self.cols}")
        self._yielded += 1
        return row

    def __iter__(self) -> Iterator[np.ndarray]:
        if self._started:
            raise StreamError("row stream can only be consumed once")
        for _ in range(self.rows):
            yield self.next_row()
        if next(self._it, None) is not None:
            raise StreamError(f"row stream has more than the declared {self.rows} rows")


class MatrixHandle:
    """Counted access to an input matrix (dense, CSR, or row stream).

    The handle owns a :class:`PassCounter`; every product with the wrapped
    matrix charges it.  Handles derived with :meth:`dense_copy` share the
    counter so work on a residual copy is charged to the same input.
    """

    def __init__(self, data, counter: PassCounter | None = None):
        if isinstance(data, MatrixHandle):
            raise TypeError("data is already a MatrixHandle")
        if isinstance(data, RowStream):
            self.kind = "stream"
            self._data = data
            self.shape = (data.rows, data.cols)
        elif sp.issparse(data):
            self.kind = "sparse"
            self._data = sp.csr_matrix(data, dtype=np.float64)
            self._data.sort_indices()
            self.shape = self._data.shape
        else:
            arr = np.asarray(data, dtype=np.float64)
            if arr.ndim != 2:
                raise DimensionError("matrix must be 2-D")
            if not np.all(np.isfinite(arr)):
                raise ValueError("matrix has non-finite entries")
            self.kind = "dense"
            self._data = arr
            self.shape = arr.shape
        self.counter = counter if counter is not None else PassCounter()

    @property
    def passes(self) -> int:
        return self.counter.passes

    @property
    def data(self):
        """The wrapped array/sparse matrix.  Uncounted: for oracles and I/O only."""
        if self.kind == "stream":
            raise StreamError("a row stream has no random-access data")
        return self._data

    def toarray(self) -> np.ndarray:
        d = self.data
        return d.toarray() if sp.issparse(d) else d

    def _random_access(self):
        if self.kind == "stream":
            raise StreamError("row streams only support the single fused gram_sketch")
        return self._data

    def matmul(self, X: np.ndarray) -> np.ndarray:
        """``A @ X`` (1 pass)."""
        A = self._random_access()
        if X.shape[0] != self.shape[1]:
            raise DimensionError(f"cannot multiply {self.shape} by {X.shape}")
        self.counter.add(1)
        return np.asarray(A @ X)

    def rmatmul(self, X: np.ndarray) -> np.ndarray:
        """``A.T @ X`` (1 pass)."""
        A = self._random_access()
        if X.shape[0] != self.shape[0]:
            raise DimensionError(f"cannot multiply {self.shape[::-1]} by {X.shape}")
        self.counter.add(1)
        return np.asarray(A.T @ X)

    def frob_norm_sq(self) -> float:
        """``||A||_F^2`` (1 pass)."""
        A = self._random_access()
        self.counter.add(1)
        return sum_squares(A)

    def matmul_with_norm(self, X: np.ndarray) -> tuple[np.ndarray, float]:
        """``A @ X`` and ``||A||_F^2`` from the same sweep (1 pass)."""
        A = self._random_access()
        if X.shape[0] != self.shape[1]:
            raise DimensionError(f"cannot multiply {self.shape} by {X.shape}")
        self.counter.add(1)
        return np.asarray(A @ X), sum_squares(A)

    def gram_sketch(self, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """``G = A @ omega``, ``H = A.T @ G`` and ``||A||_F^2``.

        Two passes for random-access matrices.  For a row stream the three
        quantities are accumulated row by row (``G[i] = A[i] @ omega``,
        ``H += outer(A[i], G[i])``) in a single consumption, charged as 1 pass.
        """
        if omega.shape[0] != self.shape[1]:
            raise DimensionError(f"cannot multiply {self.shape} by {omega.shape}")
        if self.kind != "stream":
            G, fro2 = self.matmul_with_norm(omega)
            return G, self.rmatmul(G), fro2
        stream = self._data
        m, n = self.shape
        G = np.empty((m, omega.shape[1]))
        H = np.zeros((n, omega.shape[1]))
        energies = []
        for i, row in enumerate(stream):
            g = row @ omega
            G[i] = g
            H += np.outer(row, g)
            energies.append(float(np.dot(row, row)))
        self.counter.add(1)
        return G, H, math.fsum(energies)

    def dense_copy(self) -> MatrixHandle:
        """A dense working copy sharing this handle's counter (densifies CSR)."""
        return MatrixHandle(self.toarray().copy(), counter=self.counter)

    def subtract_product(self, Q: np.ndarray, B: np.ndarray) -> float:
        """Overwrite a dense handle with ``A - Q @ B``; returns the new ``||A||_F^2``.

        Charged as 2 passes (read + write); the norm is fused into the write.
        """
        if self.kind != "dense":
            raise TypeError("residual updates need a dense working copy")
        A = self._data
        A -= Q @ B
        self.counter.add(2)
        return sum_squares(A)

    def __repr__(self):
        return f"MatrixHandle(kind={self.kind!r}, shape={self.shape}, passes={self.passes})"


def as_handle(A) -> MatrixHandle:
    return A if isinstance(A, MatrixHandle) else MatrixHandle(A)


def frob_norm_sq(M) -> float:
    """Sum of squared entries; charges a pass when ``M`` is a handle."""
    if isinstance(M, MatrixHandle):
        return M.frob_norm_sq()
    return sum_squares(M if sp.issparse(M) else np.asarray(M, dtype=np.float64))


def matmul(A, X: np.ndarray, transpose_A: bool = False) -> np.ndarray:
    """``A @ X`` or ``A.T @ X``; charges a pass when ``A`` is a handle."""
    if isinstance(A, MatrixHandle):
        return A.rmatmul(X) if transpose_A else A.matmul(X)
    inner = A.shape[0] if transpose_A else A.shape[1]
    if X.shape[0] != inner:
        raise DimensionError(f"inner dimensions disagree: {A.shape} ({'T' if transpose_A else 'N'}) and {X.shape}")
    return np.asarray((A.T if transpose_A else A) @ X)
