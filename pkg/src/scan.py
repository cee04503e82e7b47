"""Per-covariate sweep comparing CPC and PSC estimates at a fixed k."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import KTooLarge, NotIdentifiable
from estimators import BasisCache, Method, fit
from linalg import GenotypeMatrix
from simulation import resolve_workers

logger = logging.getLogger("Scan")

REL_ERR_EPS = 1e-12
DEFAULT_BINS = 50
DEFAULT_THRESHOLDS = (0.5, 1.0)

FLAG_PSC_NOT_IDENTIFIABLE = "psc_not_identifiable"
FLAG_CPC_NOT_IDENTIFIABLE = "cpc_not_identifiable"
FLAG_PSC_K_TOO_LARGE = "psc_k_too_large"
FLAG_CPC_K_TOO_LARGE = "cpc_k_too_large"
FLAG_REL_ERR_UNDEFINED = "rel_err_undefined"

_FAILURE_FLAGS = {
    (Method.PSC, NotIdentifiable): FLAG_PSC_NOT_IDENTIFIABLE,
    (Method.CPC, NotIdentifiable): FLAG_CPC_NOT_IDENTIFIABLE,
    (Method.PSC, KTooLarge): FLAG_PSC_K_TOO_LARGE,
    (Method.CPC, KTooLarge): FLAG_CPC_K_TOO_LARGE,
}


@dataclass(frozen=True)
class ScanRecord:
    j: int
    alpha_cpc: float
    alpha_psc: float
    abs_err: float
    rel_err: float
    flags: Tuple[str, ...] = ()

    @property
    def rel_err_defined(self) -> bool:
        return not self.flags


@dataclass(frozen=True)
class HistogramBin:
    metric: str
    bin_lo: float
    bin_hi: float
    count: int


@dataclass
class ScanSummary:
    exceedances: Dict[float, int] = field(default_factory=dict)
    n_records: int = 0
    n_undefined: int = 0
    histogram: List[HistogramBin] = field(default_factory=list)


def _alpha(
    X: GenotypeMatrix, y: np.ndarray, method: Method, j: int, k: int, cache: BasisCache
) -> Tuple[Optional[float], Optional[str]]:
    """(estimate, None) on success, (None, failure flag) otherwise."""
    try:
        return fit(X, y, method, j, k, cache).alpha_hat, None
    except (NotIdentifiable, KTooLarge) as e:
        logger.debug(f"{method.value} j={j} k={k}: {e}")
        kind = KTooLarge if isinstance(e, KTooLarge) else NotIdentifiable
        return None, _FAILURE_FLAGS[(method, kind)]


def _scan_one(X: GenotypeMatrix, y: np.ndarray, k: int, j: int, cache: BasisCache) -> ScanRecord:
    alpha_psc, psc_flag = _alpha(X, y, Method.PSC, j, k, cache)
    alpha_cpc, cpc_flag = _alpha(X, y, Method.CPC, j, k, cache)
    # Leave-one-out bases are used once; keep only the shared full-matrix basis resident.
    cache.evict(X, exclude=j)

    flags = [f for f in (psc_flag, cpc_flag) if f]
    if flags:
        return ScanRecord(
            j=j,
            alpha_cpc=math.nan if alpha_cpc is None else alpha_cpc,
            alpha_psc=math.nan if alpha_psc is None else alpha_psc,
            abs_err=math.nan,
            rel_err=math.nan,
            flags=tuple(flags) + (FLAG_REL_ERR_UNDEFINED,),
        )

    abs_err = abs(alpha_cpc - alpha_psc)
    if abs(alpha_psc) < REL_ERR_EPS:
        return ScanRecord(j, alpha_cpc, alpha_psc, abs_err, math.nan, (FLAG_REL_ERR_UNDEFINED,))
    return ScanRecord(j, alpha_cpc, alpha_psc, abs_err, abs_err / abs(alpha_psc))


def scan_all(
    X: GenotypeMatrix,
    y,
    k: int,
    cache: Optional[BasisCache] = None,
    workers: Optional[int] = None,
) -> List[ScanRecord]:
    """CPC and PSC for every covariate, in index order.

    The response is mean-centered. PSC shares one decomposition of X; CPC decomposes X
    without column j for every j. `cache.counts` reports both tallies.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.n,):
        raise ValueError(f"response has shape {y.shape}, expected ({X.n},)")
    y = y - y.mean()

    cache = cache if cache is not None else BasisCache()
    cache.get(X)
    workers = resolve_workers(workers)
    logger.info(f"Scanning {X.p} covariates at k={k} ({workers} worker(s))")

    indices = range(1, X.p + 1)
    if workers == 1:
        records = [_scan_one(X, y, k, j, cache) for j in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda j: _scan_one(X, y, k, j, cache), indices))

    undefined = sum(1 for r in records if not r.rel_err_defined)
    if undefined:
        logger.warning(f"{undefined} covariate(s) have an undefined relative error")
    return records


def summarize_scan(
    records: Sequence[ScanRecord],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    bins: int = DEFAULT_BINS,
) -> ScanSummary:
    """Count rel_err > t for each threshold and bin abs_err / rel_err into histograms."""
    if not records:
        raise ValueError("summarize_scan needs at least one record")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")

    rel = np.array([r.rel_err for r in records if r.rel_err_defined])
    summary = ScanSummary(n_records=len(records), n_undefined=len(records) - rel.size)
    for t in thresholds:
        summary.exceedances[float(t)] = int(np.count_nonzero(rel > t))

    metrics = {
        "abs_err": np.array([r.abs_err for r in records if math.isfinite(r.abs_err)]),
        "rel_err": rel,
    }
    for metric, values in metrics.items():
        counts, edges = np.histogram(values, bins=bins)
        summary.histogram.extend(
            HistogramBin(metric, float(lo), float(hi), int(c))
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        )
    return summary
