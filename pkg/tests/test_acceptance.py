"""Acceptance-scale runs on the 12x12 unit-square scenario (2x2 old vs 3x3 new)."""
import math
import time

import numpy as np
import pytest
from scipy import stats

from aggvae import aggregate, diagnostics, geometry, inference, priors, synthdata, vae
from aggvae._classes import Era, ModelKind

pytestmark = pytest.mark.slow

SEED = 2024


@pytest.fixture(scope="module")
def scenario():
    old, new = synthdata.make_partitions(2, 2, 3, 3)
    truth = synthdata.TruthSpec(b0=-1.0, kernel=priors.KernelSpec(variance=1.0, lengthscale=0.3))
    return synthdata.simulate_counts(old, new, 12, truth, 1000, seed=SEED)


@pytest.fixture(scope="module")
def decoder(scenario):
    M_old = geometry.membership_matrix(scenario.grid, scenario.polygons_old)
    M_new = geometry.membership_matrix(scenario.grid, scenario.polygons_new)
    training = aggregate.generate_training_set(
        scenario.grid, M_old, M_new, priors.HyperPriorSpec(), count=20000, seed=SEED
    )
    return vae.train(training, vae.default_spec(13), 200, 100, 1e-3, None, seed=SEED)


@pytest.fixture(scope="module")
def runs(scenario, decoder):
    grid = scenario.grid
    M_old = geometry.membership_matrix(grid, scenario.polygons_old)
    M_new = geometry.membership_matrix(grid, scenario.polygons_new)
    gp_spec = inference.ModelSpec(
        ModelKind.AGGGP, scenario.data_old, scenario.data_new, grid=grid, M_old=M_old, M_new=M_new
    )
    vae_spec = inference.ModelSpec(ModelKind.AGGVAE, scenario.data_old, scenario.data_new, decoder=decoder)
    return {
        ModelKind.AGGGP: inference.run_nuts(gp_spec, chains=4, warmup=200, samples=1000, seed=SEED),
        ModelKind.AGGVAE: inference.run_nuts(vae_spec, chains=4, warmup=200, samples=1000, seed=SEED),
    }


def test_posterior_means_agree_and_cover_truth(scenario, runs):
    truth = np.concatenate([scenario.theta_old, scenario.theta_new])
    n_tests = np.concatenate([scenario.data_old.n_tests, scenario.data_new.n_tests])
    means = {}
    for kind, chains in runs.items():
        means[kind] = inference.posterior_prevalence(chains)["mean"].to_numpy()

    np.testing.assert_allclose(means[ModelKind.AGGGP], means[ModelKind.AGGVAE], atol=0.05)
    low = stats.binom.ppf(0.025, n_tests, truth) / n_tests
    high = stats.binom.ppf(0.975, n_tests, truth) / n_tests
    for estimate in means.values():
        inside = (estimate >= low) & (estimate <= high)
        assert inside.mean() >= 0.9


def test_surrogate_converges(runs):
    chains = runs[ModelKind.AGGVAE]
    names = diagnostics.re_names(chains)
    assert max(diagnostics.split_rhat(chains.column(name)) for name in names) <= 1.02
    assert np.mean([diagnostics.ess_bulk(chains.column(name)) for name in names]) >= 150


def test_surrogate_is_far_more_efficient(runs):
    report = diagnostics.comparison_report(runs[ModelKind.AGGGP], runs[ModelKind.AGGVAE])
    per_minute = report.loc["ESS per minute"]
    assert per_minute[ModelKind.AGGVAE] >= 100 * per_minute[ModelKind.AGGGP]


def _seconds_per_call(function, q, repeats):
    function(q)
    started = time.perf_counter()
    for _ in range(repeats):
        function(q)
    return (time.perf_counter() - started) / repeats


def test_cost_per_gradient_scales_with_grid_only_for_the_exact_model(decoder):
    old, new = synthdata.make_partitions(2, 2, 3, 3)
    data_old = inference.PrevalenceData(old.labels, np.full(4, 100), np.full(4, 30))
    data_new = inference.PrevalenceData(new.labels, np.full(9, 100), np.full(9, 30))
    generator = np.random.default_rng(0)

    gp_cost, vae_cost = [], []
    for resolution in (12, 24, 48):
        grid = geometry.build_grid([old, new], resolution)
        spec = inference.ModelSpec(
            ModelKind.AGGGP,
            data_old,
            data_new,
            grid=grid,
            M_old=geometry.membership_matrix(grid, old),
            M_new=geometry.membership_matrix(grid, new),
        )
        model = inference.build_model(spec)
        q = np.concatenate([[-1.0, math.log(0.3), math.log(0.05)], generator.normal(size=grid.n)])
        gp_cost.append(_seconds_per_call(model.target, q, repeats=3))

        # the surrogate never sees the grid
        surrogate = inference.build_model(inference.ModelSpec(ModelKind.AGGVAE, data_old, data_new, decoder=decoder))
        z = np.concatenate([[-1.0, 0.0], generator.normal(size=decoder.latent_dim)])
        vae_cost.append(_seconds_per_call(surrogate.target, z, repeats=2000))

    assert gp_cost[1] > 4 * gp_cost[0]
    assert gp_cost[2] > 4 * gp_cost[1]
    assert max(vae_cost) / min(vae_cost) < 1.2


def test_pooled_theta_columns_match_units(runs):
    chains = runs[ModelKind.AGGVAE]
    assert chains.theta(Era.OLD).shape[2] == 4
    assert chains.theta(Era.NEW).shape[2] == 9
