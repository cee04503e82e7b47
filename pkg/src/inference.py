"""Bias-aware test of H0: α = 0 for the CPC estimate.

Under H0 the estimate lies in ±(N/D + q·sqrt(σ²/D)), where N bounds the omitted-component
mass ‖γ(k+1:r)‖₁ and D = |1 − ‖X·jᵀU(1:k)‖²| for a standardized design.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from errors import DegenerateD, InsufficientDof, InvalidLevel, KTooLarge
from estimators import BasisCache, Method, basis_for, gamma_truth_cpc
from linalg import GenotypeMatrix

logger = logging.getLogger("Inference")

DEGENERATE_D = 1e-10

DOF_SAMPLE = "sample"      # t quantile with n - 1 degrees of freedom
DOF_RESIDUAL = "residual"  # t quantile with n - k - 1 degrees of freedom
DOF_CONVENTIONS = (DOF_SAMPLE, DOF_RESIDUAL)


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False  # keep pytest from collecting this as a test class

    alpha_hat: float
    N: float
    D: float
    sigma: float
    sigma_estimated: bool
    level: float
    quantile: float
    quantile_family: str
    interval: Tuple[float, float]
    reject: bool


def compute_ND(
    X: GenotypeMatrix,
    j: int,
    k: int,
    gamma_tail_l1: float,
    cache: Optional[BasisCache] = None,
) -> Tuple[float, float]:
    """(N, D) with N = gamma_tail_l1 and D = |1 − ‖X·jᵀU(1:k)‖²| from the CPC basis."""
    if gamma_tail_l1 < 0:
        raise ValueError(f"gamma_tail_l1 must be >= 0, got {gamma_tail_l1}")
    basis = basis_for(X, Method.CPC, j, cache)
    if k > basis.rank:
        raise KTooLarge(k, basis.rank)

    c = basis.left_vectors[:, :k].T @ X.column(j)
    D = abs(1.0 - float(c @ c))
    if D < DEGENERATE_D:
        raise DegenerateD(D)
    return float(gamma_tail_l1), D


def truth_gamma_tail_l1(
    X: GenotypeMatrix,
    beta,
    j: int,
    k: int,
    cache: Optional[BasisCache] = None,
) -> float:
    """‖γ(k+1:r)‖₁ from the true coefficients (simulation truth as the N source)."""
    gamma = gamma_truth_cpc(X, beta, j, cache)
    return float(np.abs(gamma[k:]).sum())


def critical_value(level: float, sigma_estimated: bool, n: int, k: int = 0, dof_convention: str = DOF_SAMPLE) -> Tuple[float, str]:
    if not 0.0 < level < 1.0:
        raise InvalidLevel(level)
    if not sigma_estimated:
        return float(stats.norm.ppf(1.0 - level / 2.0)), "normal"

    if dof_convention not in DOF_CONVENTIONS:
        raise ValueError(f"unknown dof convention {dof_convention!r}")
    dof = n - 1 if dof_convention == DOF_SAMPLE else n - k - 1
    if dof < 1:
        raise InsufficientDof(n, k if dof_convention == DOF_RESIDUAL else 0)
    return float(stats.t.ppf(1.0 - level / 2.0, dof)), f"student(df={dof})"


def test_h0(
    alpha_hat: float,
    N: float,
    D: float,
    sigma: float,
    sigma_estimated: bool,
    n: int,
    a: float,
    k: int = 0,
    dof_convention: str = DOF_SAMPLE,
) -> TestOutcome:
    """Reject H0: α = 0 when alpha_hat falls outside ±(N/D + q·sqrt(σ²/D))."""
    if not 0.0 < a < 1.0:
        raise InvalidLevel(a)
    if D <= 0:
        raise DegenerateD(D)
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")

    q, family = critical_value(a, sigma_estimated, n, k, dof_convention)
    half_width = N / D + q * math.sqrt(sigma * sigma / D)
    lo, hi = -half_width, half_width
    reject = not (lo <= alpha_hat <= hi)
    logger.debug(f"alpha_hat={alpha_hat:.6g} interval=[{lo:.6g}, {hi:.6g}] reject={reject}")

    return TestOutcome(
        alpha_hat=float(alpha_hat),
        N=float(N),
        D=float(D),
        sigma=float(sigma),
        sigma_estimated=bool(sigma_estimated),
        level=float(a),
        quantile=q,
        quantile_family=family,
        interval=(lo, hi),
        reject=reject,
    )


def estimate_sigma(residuals, k: int) -> float:
    """sqrt(‖r‖² / (n − k − 1)) from the residuals of a fitted augmented model."""
    r = np.asarray(residuals, dtype=np.float64)
    n = r.shape[0]
    if n - k - 1 < 1:
        raise InsufficientDof(n, k)
    return float(math.sqrt(float(r @ r) / (n - k - 1)))
