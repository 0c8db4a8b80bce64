"""Synthetic test matrices with prescribed singular values.

The three standard profiles are

* ``inv_square``: ``sigma_j = 1 / j**2`` (slow decay, "Matrix 1"),
* ``exp_decay``: ``sigma_j = exp(-j / tau)`` (fast decay, "Matrix 2" with tau=7),
* ``s_shape``: ``sigma_j = floor + 1 / (1 + exp(j - center))`` ("Matrix 3").
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .kernel import gaussian, make_rng, orth_qr

KINDS = ("inv_square", "exp_decay", "s_shape", "explicit")


@dataclass(frozen=True)
class SpectrumSpec:
    kind: str
    n: int
    tau: float = 7.0
    floor: float = 1e-4
    center: int = 30
    values: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise ValueError(f"spectrum dimension must be positive, got {self.n}")
        if self.kind == "explicit" and len(self.values) != self.n:
            raise ValueError(f"explicit spectrum has {len(self.values)} values for n={self.n}")

    @classmethod
    def matrix1(cls, n):
        return cls("inv_square", n)

    @classmethod
    def matrix2(cls, n):
        return cls("exp_decay", n, tau=7.0)

    @classmethod
    def matrix3(cls, n):
        return cls("s_shape", n)

    @classmethod
    def explicit(cls, values):
        values = tuple(float(v) for v in values)
        return cls("explicit", len(values), values=values)


def spectrum_values(spec: SpectrumSpec) -> np.ndarray:
    """sigma_1..sigma_n for ``spec``.

    ``exp_decay`` underflows to exactly 0 beyond ``j ~ 745 * tau``; such trailing
    zeros are harmless for rank and error computations.
    """
    j = np.arange(1, spec.n + 1, dtype=np.float64)
    if spec.kind == "inv_square":
        return 1.0 / j**2
    if spec.kind == "exp_decay":
        return np.exp(-j / spec.tau)
    if spec.kind == "s_shape":
        # expit(c - j) == 1 / (1 + exp(j - c)) without overflow for large j
        return spec.floor + expit(spec.center - j)
    return np.array(spec.values, dtype=np.float64)


@dataclass(frozen=True)
class SyntheticMatrix:
    matrix: np.ndarray
    spectrum: np.ndarray
    seed: object


def random_orthogonal(n: int, rng) -> np.ndarray:
    return orth_qr(gaussian(n, n, rng))[0]


def synthesize(spec: SpectrumSpec, rng=None) -> SyntheticMatrix:
    """``A = U diag(sigma) V^T`` with Haar-like random orthogonal ``U`` and ``V``."""
    seed = rng
    rng = make_rng(rng)
    sigma = spectrum_values(spec)
    U = random_orthogonal(spec.n, rng)
    V = random_orthogonal(spec.n, rng)
    A = (U * sigma) @ V.T
    return SyntheticMatrix(A, sigma, seed)


def sparse_random(n: int, density: float, rng=None, m: int | None = None) -> sp.csr_matrix:
    """``m x n`` CSR matrix, each entry nonzero with probability ``density``.

    Nonzero values are standard normal.  With ``density=1`` the result equals
    ``gaussian(m, n, rng)`` drawn from the same seed.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    m = n if m is None else m
    rng = make_rng(rng)
    if density == 1.0:
        return sp.csr_matrix(gaussian(m, n, rng))
    nnz = rng.binomial(m * n, density)
    flat = rng.choice(m * n, size=nnz, replace=False)
    rows, cols = np.divmod(flat, n)
    vals = rng.standard_normal(nnz)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    A.sort_indices()
    return A


def optimal_rank(sigma, eps_rel: float) -> int:
    """Smallest k with ``sqrt(sum_{j>k} sigma_j^2) < eps_rel * ||sigma||_2``.

    Returns ``len(sigma)`` if the tolerance is never met (only possible when the
    spectrum is all zeros).
    """
    s2 = np.asarray(sigma, dtype=np.float64) ** 2
    # tail[k] = sum_{j>k} sigma_j^2, accumulated from the small end
    tail = np.append(np.cumsum(s2[::-1])[::-1], 0.0)
    target = eps_rel**2 * tail[0]
    hits = np.flatnonzero(tail < target)
    return int(hits[0]) if hits.size else len(s2)


def optimal_error(sigma, k: int) -> float:
    """Eckart-Young error ``sqrt(sum_{j>k} sigma_j^2)`` of the best rank-k approximation."""
    s = np.asarray(sigma, dtype=np.float64)[k:]
    return float(np.sqrt(np.dot(s, s)))
