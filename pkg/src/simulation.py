"""Scenario generators, response simulator and the Monte Carlo runner.

Randomness comes only from counter-based Philox generators keyed by mixed integer seeds;
no global RNG state is touched. Replicate m of scenario s uses

    seed(s, m, stream) = mix_seed(mix_seed(mix_seed(config.seed, s), m), stream)

with `mix_seed(a, b) = splitmix64(splitmix64(a) XOR b)` over 64-bit integers, so a replicate's
draws do not depend on the replicate count or on the other scenarios in the run.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from errors import (
    ConfigError,
    KTooLarge,
    NotIdentifiable,
    RankDeficient,
    StructuredConstructionFailed,
)
from estimators import BasisCache, Method, build_design, moments
from linalg import GenotypeMatrix, center_normalize, solve_least_squares, thin_svd

logger = logging.getLogger("Simulation")

SCENARIOS = ("independent", "dependent", "binary", "structured")
COLUMN_SCALES = ("unit_norm", "unit_variance")
METHODS = (Method.CPC, Method.PSC)

STRUCTURED_ALIGNMENT = 0.99
STRUCTURED_RETRIES = 3

FLAG_OK = ""
FLAG_NOT_IDENTIFIABLE = "not_identifiable"
FLAG_K_TOO_LARGE = "k_too_large"

_MASK64 = (1 << 64) - 1
_STREAM_DESIGN = 1
_STREAM_BETA = 2
_STREAM_NOISE = 3
_FIXED_REPLICATE = _MASK64  # replicate slot reserved for the fixed design


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------

def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(seed: int, index: int) -> int:
    return _splitmix64(_splitmix64(seed & _MASK64) ^ (index & _MASK64))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


def stream_seed(seed: int, scenario: str, replicate: int, stream: int) -> int:
    scenario_seed = mix_seed(seed, SCENARIOS.index(scenario))
    return mix_seed(mix_seed(scenario_seed, replicate), stream)


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        raw = os.getenv("CPCSCAN_THREADS", "").strip()
        try:
            workers = int(raw) if raw else 1
        except ValueError:
            logger.warning(f"Ignoring CPCSCAN_THREADS={raw!r}; using 1 worker")
            workers = 1
    return max(1, int(workers))


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    n: int = 1000
    p: int = 100
    sparsity: int = 20
    sigma: float = 1.0
    scenarios: Tuple[str, ...] = ("independent",)
    ar_rho: float = 0.5
    structured_tau: float = 0.1
    k_min: int = 1
    k_max: int = 30
    replicates: int = 100
    seed: int = 0
    fixed_design: bool = False
    dof_convention: str = "sample"
    column_scale: str = "unit_norm"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigError("n", f"must be >= 2, got {self.n}")
        if self.p < 2:
            raise ConfigError("p", f"must be >= 2, got {self.p}")
        if not 1 <= self.sparsity <= self.p:
            raise ConfigError("sparsity", f"must lie in [1, p={self.p}], got {self.sparsity}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError("sigma", f"must be a finite value > 0, got {self.sigma}")
        if not self.scenarios:
            raise ConfigError("scenario", "at least one scenario is required")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ConfigError("scenario", f"unknown scenario {s!r}; expected one of {', '.join(SCENARIOS)}")
        if len(set(self.scenarios)) != len(self.scenarios):
            raise ConfigError("scenario", "scenarios must not repeat")
        if not -1.0 < self.ar_rho < 1.0:
            raise ConfigError("ar_rho", f"must lie in (-1, 1), got {self.ar_rho}")
        if not self.structured_tau > 0:
            raise ConfigError("structured_tau", f"must be > 0, got {self.structured_tau}")
        if self.k_min < 0:
            raise ConfigError("k_min", f"must be >= 0, got {self.k_min}")
        if self.k_max < self.k_min:
            raise ConfigError("k_max", f"must be >= k_min={self.k_min}, got {self.k_max}")
        if self.k_max >= min(self.n, self.p):
            raise ConfigError("k_max", f"must be < min(n, p)={min(self.n, self.p)}, got {self.k_max}")
        if self.replicates < 1:
            raise ConfigError("replicates", f"must be >= 1, got {self.replicates}")
        if self.seed < 0:
            raise ConfigError("seed", f"must be an unsigned integer, got {self.seed}")
        if self.dof_convention not in ("sample", "residual"):
            raise ConfigError("dof_convention", f"must be 'sample' or 'residual', got {self.dof_convention!r}")
        if self.column_scale not in COLUMN_SCALES:
            raise ConfigError("column_scale", f"must be one of {', '.join(COLUMN_SCALES)}, got {self.column_scale!r}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "SimulationConfig":
        return cls(
            n=int(cfg["n"]),
            p=int(cfg["p"]),
            sparsity=int(cfg["sparsity"]),
            sigma=float(cfg["sigma"]),
            scenarios=tuple(cfg["scenario"]),
            ar_rho=float(cfg["ar_rho"]),
            structured_tau=float(cfg["structured_tau"]),
            k_min=int(cfg["k_min"]),
            k_max=int(cfg["k_max"]),
            replicates=int(cfg["replicates"]),
            seed=int(cfg["seed"]),
            fixed_design=bool(cfg["fixed_design"]),
            dof_convention=str(cfg["dof_convention"]),
            column_scale=str(cfg["column_scale"]),
        )

    @property
    def noise_sigma(self) -> float:
        """Noise level on the unit-norm design (σ/√n reproduces unit-variance columns)."""
        if self.column_scale == "unit_variance":
            return self.sigma / math.sqrt(self.n)
        return self.sigma

    @property
    def ks(self) -> range:
        return range(self.k_min, self.k_max + 1)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateRecord:
    scenario: str
    method: str
    k: int
    replicate: int
    alpha_hat: float
    flag: str
    theo_bias: float = math.nan
    theo_var: float = math.nan
    oracle_gap: float = math.nan


@dataclass(frozen=True)
class CellSummary:
    scenario: str
    method: str
    k: int
    mean: float
    sd: float
    theo_bias: float
    theo_var: float
    n_fail: int
    n_ok: int
    max_oracle_gap: float


@dataclass
class SimulationReport:
    config: SimulationConfig
    cells: List[CellSummary] = field(default_factory=list)
    estimates: List[EstimateRecord] = field(default_factory=list)

    def cell(self, scenario: str, method, k: int) -> CellSummary:
        method = Method(method).value
        for c in self.cells:
            if c.scenario == scenario and c.method == method and c.k == k:
                return c
        raise KeyError((scenario, method, k))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _unit_centered(v: np.ndarray) -> np.ndarray:
    v = v - v.mean()
    return v / np.linalg.norm(v)


def top2_alignment(X: GenotypeMatrix, j: int = 1) -> float:
    """max |X·jᵀū| over the two leading left singular vectors of X."""
    basis = thin_svd(X.values)
    return float(np.max(np.abs(basis.left_vectors[:, :2].T @ X.column(j))))


def _structured(rng: np.random.Generator, n: int, p: int, tau: float) -> np.ndarray:
    if p >= n:
        raise StructuredConstructionFailed(0.0, f"structured design needs p < n, got n={n}, p={p}")

    g = _unit_centered(rng.standard_normal(n))
    f = rng.standard_normal(n)
    f = f - f.mean()
    f = _unit_centered(f - (f @ g) * g)

    values = np.empty((n, p))
    values[:, 1] = g
    for c in range(2, p):
        values[:, c] = _unit_centered(g + tau * rng.standard_normal(n) / math.sqrt(n))

    # Column 1 is orthogonal to the rest up to a tau-sized perturbation, so it carries its
    # own leading principal direction of X while PSC stays (barely) identifiable.
    q, _ = sla.qr(values[:, 1:], mode="economic")
    f_perp = _unit_centered(f - q @ (q.T @ f))
    values[:, 0] = _unit_centered(f_perp + tau * rng.standard_normal(n) / math.sqrt(n))
    return values


def gen_design(
    scenario: str,
    n: int,
    p: int,
    seed: int,
    ar_rho: float = 0.5,
    structured_tau: float = 0.1,
) -> GenotypeMatrix:
    """Standardized design for one of the four simulation scenarios."""
    rng = make_rng(seed)

    if scenario == "independent":
        raw = rng.standard_normal((n, p))
    elif scenario == "dependent":
        # AR(1) recursion across columns gives rows with covariance ar_rho^|i-j|.
        raw = rng.standard_normal((n, p))
        scale = math.sqrt(1.0 - ar_rho * ar_rho)
        for c in range(1, p):
            raw[:, c] = ar_rho * raw[:, c - 1] + scale * raw[:, c]
    elif scenario == "binary":
        raw = rng.integers(0, 2, size=(n, p)).astype(np.float64) * 2.0 - 1.0
    elif scenario == "structured":
        raw = _structured(rng, n, p, structured_tau)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")

    X = center_normalize(raw)
    if scenario == "structured":
        alignment = top2_alignment(X)
        if alignment <= STRUCTURED_ALIGNMENT:
            raise StructuredConstructionFailed(alignment)
    return X


def gen_beta(p: int, s: int, seed: int) -> np.ndarray:
    """β₁ = 1 plus s − 1 random ±1 entries at distinct indices."""
    if not 1 <= s <= p:
        raise ValueError(f"sparsity must lie in [1, {p}], got {s}")
    rng = make_rng(seed)
    beta = np.zeros(p)
    beta[0] = 1.0
    support = rng.choice(np.arange(1, p), size=s - 1, replace=False)
    beta[support] = rng.choice(np.array([-1.0, 1.0]), size=s - 1)
    return beta


def simulate_response(X: GenotypeMatrix, beta, sigma: float, seed: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (X.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({X.p},)")
    noise = make_rng(seed).standard_normal(X.n)
    return X.values @ beta + sigma * noise


def oracle_full_ols(X, y) -> np.ndarray:
    """Minimum-norm least squares through the pseudoinverse; needs p < n and full column rank."""
    values = X.values if isinstance(X, GenotypeMatrix) else np.asarray(X, dtype=np.float64)
    n, p = values.shape
    if p >= n:
        raise RankDeficient(f"full OLS needs p < n, got {n}x{p}")
    rank = thin_svd(values).rank
    if rank < p:
        raise RankDeficient(f"design has rank {rank} < p={p}")
    return sla.pinv(values) @ np.asarray(y, dtype=np.float64)


# ---------------------------------------------------------------------------
# Monte Carlo runner
# ---------------------------------------------------------------------------

def _design_with_retry(config: SimulationConfig, scenario: str, seed: int) -> GenotypeMatrix:
    tau = config.structured_tau
    for attempt in range(STRUCTURED_RETRIES + 1):
        try:
            return gen_design(scenario, config.n, config.p, seed, config.ar_rho, tau)
        except StructuredConstructionFailed as e:
            if scenario != "structured" or attempt == STRUCTURED_RETRIES or config.p >= config.n:
                raise
            logger.warning(f"{e}; retrying with structured_tau={tau / 2:g}")
            tau /= 2.0
    raise AssertionError("unreachable")


def _truth(config: SimulationConfig, scenario: str, replicate: int) -> Tuple[GenotypeMatrix, np.ndarray]:
    X = _design_with_retry(config, scenario, stream_seed(config.seed, scenario, replicate, _STREAM_DESIGN))
    beta = gen_beta(config.p, config.sparsity, stream_seed(config.seed, scenario, replicate, _STREAM_BETA))
    return X, beta


def _run_replicate(
    config: SimulationConfig,
    scenario: str,
    m: int,
    fixed: Optional[Tuple[GenotypeMatrix, np.ndarray, BasisCache]],
) -> List[EstimateRecord]:
    if fixed is not None:
        X, beta, cache = fixed
    else:
        X, beta = _truth(config, scenario, m)
        cache = BasisCache()

    sigma = config.noise_sigma
    y = simulate_response(X, beta, sigma, stream_seed(config.seed, scenario, m, _STREAM_NOISE))
    # Noisy and noiseless responses share each factorization.
    Y = np.column_stack([y, X.values @ beta])

    records: List[EstimateRecord] = []
    for method in METHODS:
        for k in config.ks:
            try:
                design = build_design(X, method, 1, k, cache)
                coef = solve_least_squares(design.Z, Y).coefficients
                mom = moments(X, beta, method, 1, k, sigma * sigma, cache)
            except NotIdentifiable:
                records.append(EstimateRecord(scenario, method.value, k, m, math.nan, FLAG_NOT_IDENTIFIABLE))
                continue
            except KTooLarge:
                records.append(EstimateRecord(scenario, method.value, k, m, math.nan, FLAG_K_TOO_LARGE))
                continue

            records.append(
                EstimateRecord(
                    scenario=scenario,
                    method=method.value,
                    k=k,
                    replicate=m,
                    alpha_hat=float(coef[0, 0]),
                    flag=FLAG_OK,
                    theo_bias=mom.bias,
                    theo_var=mom.variance,
                    oracle_gap=abs(float(coef[0, 1]) - mom.expectation),
                )
            )
    return records


def _summarize(scenario: str, method: str, k: int, records: Sequence[EstimateRecord]) -> CellSummary:
    ok = [r for r in records if r.flag == FLAG_OK]
    alphas = np.array([r.alpha_hat for r in ok])
    if alphas.size:
        mean = float(alphas.mean())
        sd = float(alphas.std(ddof=1)) if alphas.size > 1 else 0.0
        theo_bias = float(np.mean([r.theo_bias for r in ok]))
        theo_var = float(np.mean([r.theo_var for r in ok]))
        gap = float(max(r.oracle_gap for r in ok))
    else:
        mean = sd = theo_bias = theo_var = gap = math.nan
    return CellSummary(
        scenario=scenario,
        method=method,
        k=k,
        mean=mean,
        sd=sd,
        theo_bias=theo_bias,
        theo_var=theo_var,
        n_fail=len(records) - len(ok),
        n_ok=len(ok),
        max_oracle_gap=gap,
    )


def monte_carlo_run(config: SimulationConfig, workers: Optional[int] = None) -> SimulationReport:
    """Fit CPC and PSC at every k on every replicate of every scenario and aggregate."""
    workers = resolve_workers(workers)
    report = SimulationReport(config=config)

    for scenario in config.scenarios:
        fixed = None
        if config.fixed_design:
            X, beta = _truth(config, scenario, _FIXED_REPLICATE)
            fixed = (X, beta, BasisCache())

        logger.info(
            f"Scenario {scenario}: n={config.n} p={config.p} s={config.sparsity} "
            f"k={config.k_min}..{config.k_max} M={config.replicates} "
            f"({'fixed' if fixed else 'redrawn'} design, {workers} worker(s))"
        )

        replicates = range(config.replicates)
        if workers == 1:
            per_replicate = [_run_replicate(config, scenario, m, fixed) for m in replicates]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                # map() yields in replicate order whatever the completion order.
                per_replicate = list(pool.map(lambda m: _run_replicate(config, scenario, m, fixed), replicates))

        by_cell: Dict[Tuple[str, int], List[EstimateRecord]] = {}
        for records in per_replicate:
            for r in records:
                by_cell.setdefault((r.method, r.k), []).append(r)

        for method in METHODS:
            for k in config.ks:
                cell = _summarize(scenario, method.value, k, by_cell.get((method.value, k), []))
                if cell.n_fail:
                    logger.warning(f"{scenario}/{method.value}/k={k}: {cell.n_fail} replicate(s) not identifiable")
                report.cells.append(cell)

        for method in METHODS:
            for k in config.ks:
                report.estimates.extend(by_cell.get((method.value, k), []))

    return report
