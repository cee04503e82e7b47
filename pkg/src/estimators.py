"""PSC / CPC regressions and their closed-form moments.

PSC augments the univariate regression of y on X·j with the top-k left singular vectors of
the full matrix X. CPC takes them from X with column j removed. Target indices are 1-based.
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DimensionMismatch, KTooLarge, NotIdentifiable
from linalg import (
    DEFAULT_COND_TOL,
    GenotypeMatrix,
    SpectralBasis,
    solve_least_squares,
    thin_svd,
)

logger = logging.getLogger("Estimators")

D_REL_TOL = 1e-10


class Method(str, Enum):
    PSC = "PSC"
    CPC = "CPC"


@dataclass(frozen=True)
class FitResult:
    method: Method
    target_index: int
    k: int
    alpha_hat: float
    gamma_hat: np.ndarray
    residuals: np.ndarray
    condition_ratio: float


@dataclass(frozen=True)
class TheoreticalMoments:
    method: Method
    k: int
    bias: float
    variance: float
    expectation: float
    corr_coeffs: np.ndarray
    denominator: float


@dataclass(frozen=True)
class Design:
    Z: np.ndarray
    basis: SpectralBasis


@dataclass(frozen=True)
class DominanceViolation:
    design_index: int
    k: int
    margin: float


# ---------------------------------------------------------------------------
# Decomposition cache
# ---------------------------------------------------------------------------

class BasisCache:
    """SpectralBasis per (matrix identity, excluded column); safe for concurrent readers.

    `counts` tracks how many decompositions were computed: "psc" for the full matrix,
    "cpc" for leave-one-column-out matrices.
    """

    def __init__(self, rank_tol_factor: float = 1.0):
        self.rank_tol_factor = rank_tol_factor
        self.counts: Counter = Counter()
        self._entries: Dict[Tuple[int, int], Tuple[np.ndarray, SpectralBasis]] = {}
        self._lock = threading.Lock()

    def get(self, X: GenotypeMatrix, exclude: Optional[int] = None) -> SpectralBasis:
        key = (id(X.values), int(exclude or 0))
        with self._lock:
            hit = self._entries.get(key)
        # The identity check guards against id() reuse after the old matrix was freed.
        if hit is not None and hit[0] is X.values:
            return hit[1]

        source = X.values if exclude is None else X.without(exclude)
        basis = thin_svd(source, self.rank_tol_factor)

        with self._lock:
            hit = self._entries.get(key)
            if hit is not None and hit[0] is X.values:
                return hit[1]
            self._entries[key] = (X.values, basis)
            self.counts["psc" if exclude is None else "cpc"] += 1
        logger.debug(f"Decomposed {'X' if exclude is None else f'X(-{exclude})'}: rank {basis.rank}")
        return basis

    def evict(self, X: GenotypeMatrix, exclude: Optional[int] = None) -> None:
        """Drop one entry; `counts` keeps recording the decompositions already done."""
        with self._lock:
            self._entries.pop((id(X.values), int(exclude or 0)), None)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self.counts.clear()


def _check_target(X: GenotypeMatrix, j: int) -> None:
    if not X.standardized:
        raise ValueError("estimators expect a standardized GenotypeMatrix (see center_normalize)")
    if not 1 <= j <= X.p:
        raise ValueError(f"target index j={j} outside [1, {X.p}]")


def basis_for(X: GenotypeMatrix, method: Method, j: int, cache: Optional[BasisCache] = None) -> SpectralBasis:
    cache = cache or BasisCache()
    if Method(method) is Method.PSC:
        return cache.get(X)
    return cache.get(X, exclude=j)


# ---------------------------------------------------------------------------
# Designs and fits
# ---------------------------------------------------------------------------

def build_design(
    X: GenotypeMatrix,
    method: Method,
    j: int,
    k: int,
    cache: Optional[BasisCache] = None,
) -> Design:
    """Z = (X·j | top-k left singular vectors); k = 0 is the plain univariate regression."""
    _check_target(X, j)
    if k < 0:
        raise ConfigError("k", f"must be >= 0, got {k}")
    basis = basis_for(X, method, j, cache)
    if k > basis.rank:
        raise KTooLarge(k, basis.rank)

    Z = np.empty((X.n, k + 1))
    Z[:, 0] = X.column(j)
    Z[:, 1:] = basis.left_vectors[:, :k]
    return Design(Z=Z, basis=basis)


def fit(
    X: GenotypeMatrix,
    y,
    method: Method,
    j: int,
    k: int,
    cache: Optional[BasisCache] = None,
    cond_tol: float = DEFAULT_COND_TOL,
) -> FitResult:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.n,):
        raise DimensionMismatch(f"response has shape {y.shape}, expected ({X.n},)")

    design = build_design(X, method, j, k, cache)
    solution = solve_least_squares(design.Z, y, cond_tol=cond_tol)
    coef = solution.coefficients
    if not np.all(np.isfinite(coef)):
        raise NotIdentifiable(solution.condition_ratio, "least-squares coefficients are not finite")

    return FitResult(
        method=Method(method),
        target_index=j,
        k=k,
        alpha_hat=float(coef[0]),
        gamma_hat=coef[1:].copy(),
        residuals=y - design.Z @ coef,
        condition_ratio=solution.condition_ratio,
    )


# ---------------------------------------------------------------------------
# Truth transformations
# ---------------------------------------------------------------------------

def gamma_truth_cpc(
    X: GenotypeMatrix,
    beta,
    j: int,
    cache: Optional[BasisCache] = None,
) -> np.ndarray:
    """γ = ΣVᵀβ(-j) so that X(-j)β(-j) = Uγ."""
    _check_target(X, j)
    beta = np.asarray(beta, dtype=np.float64)
    basis = basis_for(X, Method.CPC, j, cache)
    return basis.singular_values * (basis.right_vectors.T @ np.delete(beta, j - 1))


def gamma_truth_psc(X: GenotypeMatrix, beta, cache: Optional[BasisCache] = None) -> np.ndarray:
    """γ̄ = Σ̄V̄ᵀβ so that Xβ = Ūγ̄."""
    beta = np.asarray(beta, dtype=np.float64)
    basis = (cache or BasisCache()).get(X)
    return basis.singular_values * (basis.right_vectors.T @ beta)


# ---------------------------------------------------------------------------
# Closed-form moments
# ---------------------------------------------------------------------------

def _denominator(x: np.ndarray, c: np.ndarray, k: int, cond_tol: Optional[float]) -> float:
    xx = float(x @ x)
    D = xx - float(c[:k] @ c[:k])
    tol = D_REL_TOL * xx if cond_tol is None else cond_tol
    if D <= tol:
        raise NotIdentifiable(D / xx if xx > 0 else 0.0, f"identifiability denominator D={D:.3e} <= {tol:.3e}")
    return D


def cpc_moments(
    X: GenotypeMatrix,
    beta,
    j: int,
    k: int,
    sigma2: float,
    cache: Optional[BasisCache] = None,
    cond_tol: Optional[float] = None,
) -> TheoreticalMoments:
    """Closed-form bias and variance of the CPC estimate of β_j.

    bias = X·jᵀU(k+1:r) γ(k+1:r) / D, variance = σ² / D,
    D = X·jᵀX·j − ‖X·jᵀU(1:k)‖².
    """
    _check_target(X, j)
    cache = cache or BasisCache()
    beta = np.asarray(beta, dtype=np.float64)
    basis = basis_for(X, Method.CPC, j, cache)
    if k > basis.rank:
        raise KTooLarge(k, basis.rank)

    x = X.column(j)
    c = basis.left_vectors.T @ x
    D = _denominator(x, c, k, cond_tol)
    gamma = gamma_truth_cpc(X, beta, j, cache)
    bias = float(c[k:] @ gamma[k:]) / D

    return TheoreticalMoments(
        method=Method.CPC,
        k=k,
        bias=bias,
        variance=sigma2 / D,
        expectation=float(beta[j - 1]) + bias,
        corr_coeffs=c[:k].copy(),
        denominator=D,
    )


def psc_moments(
    X: GenotypeMatrix,
    beta,
    k: int,
    sigma2: float,
    j: int = 1,
    cache: Optional[BasisCache] = None,
    cond_tol: Optional[float] = None,
) -> TheoreticalMoments:
    """Closed-form moments of the PSC estimate of β_j.

    E(ᾱ) = X·jᵀŪ(k+1:r̄) γ̄(k+1:r̄) / D̄ and bias = E(ᾱ) − β_j. The expectation form is the
    one reproduced exactly by fitting the noiseless response.
    """
    _check_target(X, j)
    cache = cache or BasisCache()
    beta = np.asarray(beta, dtype=np.float64)
    basis = basis_for(X, Method.PSC, j, cache)
    if k > basis.rank:
        raise KTooLarge(k, basis.rank)

    x = X.column(j)
    c = basis.left_vectors.T @ x
    D = _denominator(x, c, k, cond_tol)
    gamma = gamma_truth_psc(X, beta, cache)
    expectation = float(c[k:] @ gamma[k:]) / D

    return TheoreticalMoments(
        method=Method.PSC,
        k=k,
        bias=expectation - float(beta[j - 1]),
        variance=sigma2 / D,
        expectation=expectation,
        corr_coeffs=c[:k].copy(),
        denominator=D,
    )


def moments(
    X: GenotypeMatrix,
    beta,
    method: Method,
    j: int,
    k: int,
    sigma2: float,
    cache: Optional[BasisCache] = None,
) -> TheoreticalMoments:
    if Method(method) is Method.CPC:
        return cpc_moments(X, beta, j, k, sigma2, cache)
    return psc_moments(X, beta, k, sigma2, j=j, cache=cache)


def direct_moments(Z, mean_response, sigma2: float) -> Tuple[float, float]:
    """(E(α̂), Var(α̂)) from the explicit normal-equation inverse (ZᵀZ)⁻¹."""
    Z = np.asarray(Z, dtype=np.float64)
    gram_inv = np.linalg.inv(Z.T @ Z)
    expectation = float((gram_inv @ (Z.T @ np.asarray(mean_response, dtype=np.float64)))[0])
    return expectation, float(sigma2 * gram_inv[0, 0])


# ---------------------------------------------------------------------------
# Variance dominance and the ℓ1 bias bound
# ---------------------------------------------------------------------------

def variance_dominance(X: GenotypeMatrix, j: int, k: int, cache: Optional[BasisCache] = None) -> float:
    """‖X·jᵀŪ(1:k)‖² − ‖X·jᵀU(1:k)‖²; nonnegative iff Var(CPC) <= Var(PSC)."""
    _check_target(X, j)
    cache = cache or BasisCache()
    psc = basis_for(X, Method.PSC, j, cache)
    cpc = basis_for(X, Method.CPC, j, cache)
    if k > psc.rank:
        raise KTooLarge(k, psc.rank)
    if k > cpc.rank:
        raise KTooLarge(k, cpc.rank)

    x = X.column(j)
    c_bar = psc.left_vectors[:, :k].T @ x
    c = cpc.left_vectors[:, :k].T @ x
    return float(c_bar @ c_bar - c @ c)


def bias_bound_l1(
    X: GenotypeMatrix,
    j: int,
    k: int,
    B: float,
    cache: Optional[BasisCache] = None,
    cond_tol: Optional[float] = None,
) -> float:
    """B·Σ_{s>k}|c_s| / D, an upper bound on |bias(α̂)| whenever ‖γ‖₁ <= B."""
    if B < 0:
        raise ValueError(f"B must be >= 0, got {B}")
    _check_target(X, j)
    basis = basis_for(X, Method.CPC, j, cache)
    if k > basis.rank:
        raise KTooLarge(k, basis.rank)

    x = X.column(j)
    c = basis.left_vectors.T @ x
    D = _denominator(x, c, k, cond_tol)
    return float(B * np.abs(c[k:]).sum() / D)


def dominance_probe(
    designs: Iterable[GenotypeMatrix],
    ks: Sequence[int],
    j: int = 1,
    tol: float = 1e-8,
) -> List[DominanceViolation]:
    """Evaluate the variance-dominance margin over a corpus; return every violation."""
    violations: List[DominanceViolation] = []
    for index, X in enumerate(designs):
        cache = BasisCache()
        for k in ks:
            margin = variance_dominance(X, j, k, cache)
            if margin < -tol:
                logger.warning(f"Variance dominance violated: design {index}, k={k}, margin={margin!r}")
                violations.append(DominanceViolation(design_index=index, k=k, margin=margin))
    return violations
