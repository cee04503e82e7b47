import numpy as np
import pytest

import simulation
from errors import ConfigError, RankDeficient, StructuredConstructionFailed
from estimators import Method
from linalg import is_standardized, thin_svd


def _config(**kw):
    base = dict(n=60, p=10, sparsity=4, k_min=1, k_max=3, replicates=3, seed=7)
    base.update(kw)
    return simulation.SimulationConfig(**base)


def test_mix_seed_is_deterministic_and_spreads():
    assert simulation.mix_seed(0, 1) == simulation.mix_seed(0, 1)
    seeds = {simulation.mix_seed(0, m) for m in range(1000)}
    assert len(seeds) == 1000
    assert simulation.mix_seed(1, 0) != simulation.mix_seed(0, 1)


def test_stream_seed_does_not_depend_on_other_scenarios():
    a = simulation.stream_seed(3, "binary", 5, 1)
    assert a == simulation.stream_seed(3, "binary", 5, 1)
    assert a != simulation.stream_seed(3, "independent", 5, 1)


@pytest.mark.parametrize("scenario", ["independent", "dependent", "binary", "structured"])
def test_gen_design_is_standardized(scenario):
    X = simulation.gen_design(scenario, 200, 20, seed=11)
    assert X.standardized
    assert is_standardized(X.values)


def test_binary_design_has_two_levels_per_column():
    X = simulation.gen_design("binary", 50, 8, seed=2)
    for c in range(X.p):
        assert len(np.unique(np.round(X.values[:, c], 12))) == 2


def test_dependent_with_zero_rho_is_the_independent_draw():
    a = simulation.gen_design("independent", 40, 6, seed=9)
    b = simulation.gen_design("dependent", 40, 6, seed=9, ar_rho=0.0)
    assert np.array_equal(a.values, b.values)


def test_dependent_neighbours_are_correlated():
    X = simulation.gen_design("dependent", 4000, 5, seed=1, ar_rho=0.5)
    corr = X.values.T @ X.values
    assert corr[0, 1] == pytest.approx(0.5, abs=0.05)
    assert corr[0, 2] == pytest.approx(0.25, abs=0.05)


def test_structured_design_isolates_the_target_direction():
    X = simulation.gen_design("structured", 200, 20, seed=4, structured_tau=0.1)

    assert simulation.top2_alignment(X) > 0.99
    cpc = thin_svd(X.without(1))
    c = cpc.left_vectors[:, :2].T @ X.column(1)
    assert np.linalg.norm(c) < 0.1


def test_structured_design_needs_p_below_n():
    with pytest.raises(StructuredConstructionFailed, match="p < n"):
        simulation.gen_design("structured", 50, 60, seed=0)


def test_gen_design_unknown_scenario():
    with pytest.raises(ValueError, match="unknown scenario"):
        simulation.gen_design("clustered", 10, 3, seed=0)


def test_gen_beta_support():
    b = simulation.gen_beta(100, 1, seed=0)
    assert b[0] == 1.0 and np.count_nonzero(b) == 1

    b = simulation.gen_beta(100, 20, seed=1)
    assert b[0] == 1.0
    assert np.count_nonzero(b) == 20
    assert set(np.unique(b[b != 0])) <= {-1.0, 1.0}

    b = simulation.gen_beta(12, 12, seed=2)
    assert np.all(np.abs(b) == 1.0) and b[0] == 1.0


def test_gen_beta_rejects_bad_sparsity():
    with pytest.raises(ValueError):
        simulation.gen_beta(5, 6, seed=0)


def test_simulate_response_noiseless_and_reproducible(random_design):
    X = random_design(30, 5)
    beta = np.array([1.0, 0.0, -1.0, 0.0, 1.0])

    assert np.array_equal(simulation.simulate_response(X, beta, 0.0, seed=3), X.values @ beta)
    a = simulation.simulate_response(X, beta, 1.0, seed=3)
    b = simulation.simulate_response(X, beta, 1.0, seed=3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, simulation.simulate_response(X, beta, 1.0, seed=4))


def test_simulate_response_noise_variance(random_design):
    X = random_design(10_000, 2)
    y = simulation.simulate_response(X, np.zeros(2), 1.0, seed=5)
    assert y.var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_oracle_full_ols(orthonormal_design, random_design):
    X = orthonormal_design(30, 5)
    y = np.random.default_rng(0).standard_normal(30)
    assert np.allclose(simulation.oracle_full_ols(X, y), X.values.T @ y, atol=1e-10)

    X = random_design(40, 6)
    beta = np.array([1.0, -1.0, 0.5, 0.0, 2.0, 1.0])
    assert np.allclose(simulation.oracle_full_ols(X, X.values @ beta), beta, atol=1e-8)


def test_oracle_full_ols_rank_deficient():
    with pytest.raises(RankDeficient):
        simulation.oracle_full_ols(np.ones((3, 5)), np.ones(3))


@pytest.mark.parametrize(
    "kw, field",
    [
        ({"sparsity": 0}, "sparsity"),
        ({"sparsity": 11}, "sparsity"),
        ({"k_max": 10}, "k_max"),
        ({"k_min": 4, "k_max": 3}, "k_max"),
        ({"replicates": 0}, "replicates"),
        ({"scenarios": ("clustered",)}, "scenario"),
        ({"sigma": -1.0}, "sigma"),
        ({"sigma": 0.0}, "sigma"),
        ({"dof_convention": "exact"}, "dof_convention"),
        ({"column_scale": "unit"}, "column_scale"),
    ],
)
def test_config_validation_names_the_field(kw, field):
    with pytest.raises(ConfigError) as e:
        _config(**kw)
    assert e.value.field == field


def test_config_from_mapping():
    cfg = {
        "n": 100, "p": 10, "sparsity": 3, "sigma": 0.5, "scenario": ["binary", "structured"],
        "ar_rho": 0.2, "structured_tau": 0.05, "k_min": 0, "k_max": 4, "replicates": 2,
        "seed": 1, "fixed_design": True, "dof_convention": "residual", "column_scale": "unit_variance",
    }
    sim = simulation.SimulationConfig.from_config(cfg)
    assert sim.scenarios == ("binary", "structured")
    assert list(sim.ks) == [0, 1, 2, 3, 4]
    assert sim.noise_sigma == pytest.approx(0.05)


def test_run_counts_records():
    report = simulation.monte_carlo_run(_config(replicates=1, k_min=2, k_max=2, scenarios=("independent", "binary")))

    assert len(report.cells) == 2 * 2 * 1
    for scenario in ("independent", "binary"):
        assert len([r for r in report.estimates if r.scenario == scenario]) == 2


def test_run_summary_statistics():
    report = simulation.monte_carlo_run(_config(replicates=5))
    cell = report.cell("independent", "CPC", 2)
    alphas = [r.alpha_hat for r in report.estimates if r.method == "CPC" and r.k == 2]

    assert len(alphas) == 5
    assert cell.mean == pytest.approx(np.mean(alphas))
    assert cell.sd == pytest.approx(np.std(alphas, ddof=1))
    assert cell.sd >= 0
    assert cell.n_fail == 0 and cell.n_ok == 5


def test_run_threads_the_linearity_oracle():
    report = simulation.monte_carlo_run(_config(replicates=4, scenarios=("dependent",)))
    for cell in report.cells:
        assert cell.max_oracle_gap < 1e-8


def test_run_is_deterministic_across_workers():
    cfg = _config(replicates=6, scenarios=("independent", "structured"))
    a = simulation.monte_carlo_run(cfg, workers=1)
    b = simulation.monte_carlo_run(cfg, workers=4)
    assert a.estimates == b.estimates
    assert a.cells == b.cells


def test_replicate_draws_do_not_depend_on_replicate_count():
    a = simulation.monte_carlo_run(_config(replicates=2))
    b = simulation.monte_carlo_run(_config(replicates=5))
    first = [r for r in b.estimates if r.replicate < 2]
    assert sorted(a.estimates, key=lambda r: (r.method, r.k, r.replicate)) == sorted(
        first, key=lambda r: (r.method, r.k, r.replicate)
    )


def test_fixed_design_keeps_theory_constant():
    report = simulation.monte_carlo_run(_config(replicates=4, fixed_design=True))
    biases = {r.theo_bias for r in report.estimates if r.method == "CPC" and r.k == 1}
    assert len(biases) == 1


def test_run_counts_failures_instead_of_aborting(monkeypatch):
    from errors import NotIdentifiable

    real = simulation.build_design

    def flaky(X, method, j, k, cache=None):
        if Method(method) is Method.PSC and k == 3:
            raise NotIdentifiable(0.0)
        return real(X, method, j, k, cache)

    monkeypatch.setattr(simulation, "build_design", flaky)
    report = simulation.monte_carlo_run(_config(replicates=3))

    cell = report.cell("independent", "PSC", 3)
    assert cell.n_fail == 3 and cell.n_ok == 0
    assert np.isnan(cell.mean)
    assert all(r.flag == simulation.FLAG_NOT_IDENTIFIABLE for r in report.estimates if r.method == "PSC" and r.k == 3)


def test_column_scale_shrinks_noise():
    assert _config(sigma=2.0, column_scale="unit_variance").noise_sigma == pytest.approx(2.0 / np.sqrt(60))
    assert _config(sigma=2.0).noise_sigma == 2.0


def test_high_dimensional_setting_runs():
    cfg = simulation.SimulationConfig(n=40, p=80, sparsity=10, k_min=1, k_max=3, replicates=2, seed=1)
    report = simulation.monte_carlo_run(cfg)
    assert all(c.n_fail == 0 for c in report.cells)
