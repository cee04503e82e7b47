"""Dense linear-algebra kernel: standardization, thin SVD, kinship and least squares.

Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from errors import ConstantColumn, DataError, DimensionMismatch, InsufficientDof, NotIdentifiable, NumericalFailure

logger = logging.getLogger("Linalg")

STANDARDIZE_TOL = 1e-10
CONSTANT_COLUMN_TOL = 1e-12
DEFAULT_COND_TOL = 1e-10


@dataclass(frozen=True)
class GenotypeMatrix:
    """n x p design. Columns are mean-0 / norm-1 when `standardized` is set."""

    values: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DimensionMismatch("GenotypeMatrix values must be 2-D")
        n, p = self.values.shape
        if n < 2 or p < 2:
            raise DimensionMismatch(f"GenotypeMatrix needs n >= 2 and p >= 2, got {n}x{p}")
        if self.standardized and not is_standardized(self.values):
            raise DataError("GenotypeMatrix flagged standardized but its columns are not mean-0 / norm-1")
        self.values.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return int(self.values.shape[1])

    def column(self, j: int) -> np.ndarray:
        """Column j (1-based)."""
        return self.values[:, j - 1]

    def without(self, j: int) -> np.ndarray:
        """Matrix with column j (1-based) removed."""
        return np.delete(self.values, j - 1, axis=1)


@dataclass(frozen=True)
class SpectralBasis:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray
    rank: int
    rank_tolerance: float


class LeastSquaresSolution(NamedTuple):
    coefficients: np.ndarray
    condition_ratio: float


def center_normalize(M) -> GenotypeMatrix:
    """Center every column and scale it to unit Euclidean norm."""
    values = np.array(M, dtype=np.float64, copy=True)
    if values.ndim != 2 or values.shape[0] < 2:
        raise DimensionMismatch("center_normalize needs a 2-D matrix with at least two rows")

    values -= values.mean(axis=0)
    norms = np.linalg.norm(values, axis=0)
    flat = np.flatnonzero(norms < CONSTANT_COLUMN_TOL)
    if flat.size:
        raise ConstantColumn(int(flat[0]) + 1)

    values /= norms
    return GenotypeMatrix(values=values, standardized=True)


def is_standardized(values: np.ndarray, tol: float = STANDARDIZE_TOL) -> bool:
    means = values.mean(axis=0)
    norms = np.linalg.norm(values, axis=0)
    return bool(np.all(np.abs(means) <= tol) and np.all(np.abs(norms - 1.0) <= tol))


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    # Largest-magnitude entry of each left vector becomes positive; argmax picks the lowest index.
    if u.shape[1] == 0:
        return
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u *= signs
    v *= signs


def thin_svd(M, rank_tol_factor: float = 1.0) -> SpectralBasis:
    """Thin SVD keeping only numerically nonzero singular values.

    Rank is the count of singular values above
    rank_tol_factor * max(n, q) * sigma_1 * eps.
    """
    A = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise NumericalFailure("thin_svd input contains non-finite values")

    try:
        u, s, vt = sla.svd(A, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        logger.debug("gesdd did not converge, retrying with gesvd")
        try:
            u, s, vt = sla.svd(A, full_matrices=False, lapack_driver="gesvd", check_finite=False)
        except np.linalg.LinAlgError as e:
            raise NumericalFailure(f"SVD did not converge: {e}") from e

    sigma_max = float(s[0]) if s.size else 0.0
    tol = rank_tol_factor * max(A.shape) * sigma_max * np.finfo(np.float64).eps
    rank = int(np.count_nonzero(s > tol)) if sigma_max > 0 else 0

    left = np.ascontiguousarray(u[:, :rank])
    right = np.ascontiguousarray(vt[:rank, :].T)
    _fix_signs(left, right)
    for arr in (left, right):
        arr.setflags(write=False)
    values = s[:rank].copy()
    values.setflags(write=False)

    return SpectralBasis(
        left_vectors=left,
        singular_values=values,
        right_vectors=right,
        rank=rank,
        rank_tolerance=float(tol),
    )


def kinship(X: GenotypeMatrix) -> np.ndarray:
    """XᵀX of a standardized design (unit diagonal)."""
    if not X.standardized:
        raise ValueError("kinship expects a standardized GenotypeMatrix")
    K = X.values.T @ X.values
    return 0.5 * (K + K.T)


def solve_least_squares(Z, y, cond_tol: float = DEFAULT_COND_TOL) -> LeastSquaresSolution:
    """Least squares via economic QR of Z.

    `y` may hold several responses as columns; they share one factorization.
    Raises NotIdentifiable when sigma_min(Z) / sigma_max(Z) < cond_tol.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, m = Z.shape
    if n <= m:
        raise InsufficientDof(n, m - 1)

    s = sla.svdvals(Z, check_finite=False)
    ratio = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    if ratio < cond_tol:
        raise NotIdentifiable(ratio)

    q, r = sla.qr(Z, mode="economic", check_finite=False)
    coef = sla.solve_triangular(r, q.T @ np.asarray(y, dtype=np.float64), check_finite=False)
    return LeastSquaresSolution(coefficients=coef, condition_ratio=ratio)
