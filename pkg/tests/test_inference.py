import math

import numpy as np
import pandas as pd
import pytest
from scipy import special, stats

from aggvae import geometry, inference, synthdata
from aggvae._classes import Era, ModelKind
from aggvae.errors import AggVAEError, DimensionMismatch, FileFormatError, NonFiniteLogDensity


@pytest.fixture
def small_data(data_factory):
    old = data_factory(["o0", "o1"], [40, 25], [12, 3])
    new = data_factory(["n0", "n1", "n2"], [30, 0, 18], [9, 0, 11])
    return old, new


@pytest.fixture
def vae_spec(small_data, decoder_factory):
    old, new = small_data
    return inference.ModelSpec(ModelKind.AGGVAE, old, new, decoder=decoder_factory(2, 3, latent_dim=2))


@pytest.fixture
def gp_spec(data_factory):
    old, new = synthdata.make_partitions(1, 2, 2, 1)
    grid = geometry.build_grid([old, new], 4)
    return inference.ModelSpec(
        ModelKind.AGGGP,
        data_factory(old.labels, [50, 20], [14, 9]),
        data_factory(new.labels, [35, 10], [4, 6]),
        grid=grid,
        M_old=geometry.membership_matrix(grid, old),
        M_new=geometry.membership_matrix(grid, new),
    )


def test_prevalence_rejects_more_positives_than_tests(data_factory):
    with pytest.raises(FileFormatError, match="b"):
        data_factory(["a", "b"], [5, 5], [1, 6])


@pytest.mark.parametrize("n_tests, n_pos", [([-1], [0]), ([2.5], [1])])
def test_prevalence_rejects_non_counts(data_factory, n_tests, n_pos):
    with pytest.raises(FileFormatError):
        data_factory(["a"], n_tests, n_pos)


def test_crude_prevalence_is_nan_without_tests(small_data):
    _, new = small_data
    crude = new.crude()
    assert crude[0] == pytest.approx(0.3)
    assert math.isnan(crude[1])


def test_reindex_follows_polygon_order(small_data):
    old, _ = small_data
    again = old.reindex(["o1", "o0"])
    assert again.labels == ("o1", "o0")
    np.testing.assert_array_equal(again.n_pos, [3, 12])
    with pytest.raises(DimensionMismatch):
        old.reindex(["o0", "zz"])


def test_prevalence_csv_round_trip(tmp_path, small_data):
    old, _ = small_data
    path = tmp_path / "data_old.csv"
    inference.write_prevalence(old, path, {"seed": 4})
    assert path.read_text().startswith("# seed = 4\n")
    again = inference.load_prevalence(path)
    assert again.labels == old.labels
    np.testing.assert_array_equal(again.n_tests, old.n_tests)


@pytest.mark.parametrize(
    "text",
    [
        "unit,n_tests\na,1\n",
        "unit,n_tests,n_pos\na,1,0\na,2,1\n",
        "unit,n_tests,n_pos\na,,0\n",
    ],
)
def test_load_prevalence_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FileFormatError):
        inference.load_prevalence(path)


def test_model_spec_checks_kind_and_handles(small_data, decoder_factory):
    old, new = small_data
    with pytest.raises(ValueError):
        inference.ModelSpec("BYM", old, new, decoder=decoder_factory(2, 3))
    with pytest.raises(ValueError):
        inference.ModelSpec(ModelKind.AGGGP, old, new, decoder=decoder_factory(2, 3))
    with pytest.raises(ValueError):
        inference.ModelSpec(ModelKind.AGGVAE, old, new)
    with pytest.raises(DimensionMismatch):
        inference.ModelSpec(ModelKind.AGGVAE, old, new, decoder=decoder_factory(3, 2))


def test_likelihood_at_even_odds(vae_spec):
    old, new = vae_spec.data_old, vae_spec.data_new
    n_tests = np.concatenate([old.n_tests, new.n_tests])
    n_pos = np.concatenate([old.n_pos, new.n_pos])
    expected = stats.binom.logpmf(n_pos, n_tests, 0.5).sum()
    assert inference.log_likelihood(np.zeros(5), vae_spec) == pytest.approx(expected)
    assert inference.log_likelihood(np.full(5, 0.5), vae_spec, is_logit=False) == pytest.approx(expected)


def test_likelihood_is_stable_at_extreme_logits():
    value, grad = inference.log_likelihood_and_grad(np.array([800.0, -800.0]), np.array([10, 10]), np.array([10, 0]))
    assert value == pytest.approx(0.0)
    np.testing.assert_allclose(grad, 0.0)


def test_untested_unit_adds_nothing():
    base, grad = inference.log_likelihood_and_grad(np.array([0.3, 2.0]), np.array([10, 0]), np.array([4, 0]))
    alone, _ = inference.log_likelihood_and_grad(np.array([0.3]), np.array([10]), np.array([4]))
    assert base == pytest.approx(alone)
    assert grad[1] == 0.0


def test_aggvae_posterior_gradient(vae_spec, numeric_grad, rel_err):
    q = np.array([-0.4, math.log(0.7), 0.3, -1.1])
    _, grad = inference.log_posterior_aggvae(q, vae_spec)
    expected = numeric_grad(lambda x: inference.log_posterior_aggvae(x, vae_spec)[0], q)
    assert rel_err(grad, expected) < 1e-5


def test_aggvae_posterior_rejects_wrong_length(vae_spec):
    with pytest.raises(DimensionMismatch):
        inference.log_posterior_aggvae(np.zeros(3), vae_spec)


def test_aggvae_non_finite_density(vae_spec):
    q = np.array([0.0, 800.0, 0.0, 0.0])
    with pytest.raises(NonFiniteLogDensity) as info:
        inference.log_posterior_aggvae(q, vae_spec)
    assert info.value.params["log_s"] == 800.0

    value, grad = inference.build_model(vae_spec).target(q)
    assert value == -math.inf
    np.testing.assert_array_equal(grad, 0.0)


def test_agggp_posterior_gradient(gp_spec, numeric_grad, rel_err):
    n = gp_spec.grid.n
    q = np.concatenate([[0.2, math.log(0.3), math.log(0.08)], np.random.default_rng(6).normal(size=n)])
    _, grad = inference.log_posterior_agggp(q, gp_spec)
    expected = numeric_grad(lambda x: inference.log_posterior_agggp(x, gp_spec)[0], q)
    assert rel_err(grad, expected) < 1e-4


def test_agggp_with_zero_effects_gives_logistic_intercept(gp_spec):
    model = inference.build_model(gp_spec)
    q = np.concatenate([[0.7, math.log(0.5), math.log(0.05)], np.zeros(gp_spec.grid.n)])
    derived = dict(zip(model.derived_names, model.derived(q)))

    assert derived["lengthscale"] == pytest.approx(0.5)
    assert derived[f"re_{Era.OLD}[0]"] == 0.0
    assert derived[f"theta_{Era.NEW}[1]"] == pytest.approx(special.expit(0.7))


def test_both_models_share_the_likelihood(vae_spec, gp_spec):
    logit = np.array([0.1, -0.3, 0.5, 1.0, -2.0])
    n_tests = np.concatenate([vae_spec.data_old.n_tests, vae_spec.data_new.n_tests])
    n_pos = np.concatenate([vae_spec.data_old.n_pos, vae_spec.data_new.n_pos])
    assert inference.log_likelihood(logit, vae_spec) == pytest.approx(
        inference.log_likelihood_and_grad(logit, n_tests, n_pos)[0]
    )
    # aggGP logits with eta = 0 collapse to b0 everywhere
    q = np.concatenate([[0.25, math.log(0.5), math.log(0.05)], np.zeros(gp_spec.grid.n)])
    model = inference.build_model(gp_spec)
    np.testing.assert_array_equal(model.random_effects(q), 0.0)


def test_failed_cholesky_gives_negative_infinity(data_factory):
    grid = geometry.Grid(points=np.array([[0.5, 0.5], [0.5, 0.5]]), dx=1.0, dy=1.0, nx=2, ny=1, bounds=(0, 0, 1, 1))
    M = geometry.MembershipMatrix(np.array([[1, 1]]), "all", grid.grid_id, ("a",), grid.cell_area)
    spec = inference.ModelSpec(
        ModelKind.AGGGP,
        data_factory(["a"], [10], [3]),
        data_factory(["a"], [10], [3]),
        grid=grid,
        M_old=M,
        M_new=M,
        jitter=0.0,
    )
    value, grad = inference.log_posterior_agggp(np.array([0.0, 0.0, math.log(0.05), 0.1, 0.2]), spec)
    assert value == -math.inf
    np.testing.assert_array_equal(grad, 0.0)


def test_model_names(vae_spec, gp_spec):
    vae_model = inference.build_model(vae_spec)
    assert vae_model.names == ["b0", "log_s", "z[0]", "z[1]"]
    assert vae_model.derived_names[:3] == ["s", "re_old[0]", "re_old[1]"]
    gp_model = inference.build_model(gp_spec)
    assert gp_model.dim == 3 + gp_spec.grid.n
    assert gp_model.names[:4] == ["b0", "log_l", "log_sigma", "eta[0]"]


def test_initial_points_are_finite(vae_spec, gp_spec):
    generator = np.random.default_rng(0)
    for spec in (vae_spec, gp_spec):
        model = inference.build_model(spec)
        q = model.initial_point(generator)
        assert q.shape == (model.dim,)
        assert np.isfinite(model.target(q)[0])


def test_theta_stays_inside_the_unit_interval(vae_spec):
    model = inference.build_model(vae_spec)
    K = vae_spec.K1 + vae_spec.K2
    for b0 in (-800.0, 800.0):
        theta = model.derived(np.array([b0, 0.0, 0.1, -0.2]))[-K:]
        assert np.all((theta > 0.0) & (theta < 1.0))


def test_run_nuts_reports_a_chain_without_a_finite_start(vae_spec, monkeypatch):
    model = inference.build_model(vae_spec)
    monkeypatch.setattr(model, "target", lambda q: (-math.inf, np.zeros_like(q)))
    with pytest.raises(NonFiniteLogDensity) as info:
        inference.run_nuts(model, chains=2, warmup=5, samples=5, seed=3, threads=1)
    assert info.value.chain == 0
    assert info.value.value == -math.inf
    assert "Chain 0" in str(info.value)


def chain_set(values, names):
    values = np.asarray(values, dtype=float)
    return inference.ChainSet(
        kind=ModelKind.AGGVAE,
        names=names,
        draws=values,
        warmup=10,
        samples=values.shape[1],
        seeds=[[1, 5, 0], [1, 5, 1]],
        K1=1,
        K2=1,
        labels_old=("a",),
        labels_new=("b",),
    )


def test_posterior_prevalence_of_constant_draws():
    chains = chain_set(np.full((2, 20, 2), 0.3), ["theta_old[0]", "theta_new[0]"])
    table = inference.posterior_prevalence(chains)
    assert list(table.columns) == ["era", "unit", "label", "mean", "q2.5", "q97.5"]
    np.testing.assert_allclose(table[["mean", "q2.5", "q97.5"]].to_numpy(), 0.3)
    assert list(table["label"]) == ["a", "b"]


def test_posterior_prevalence_uses_linear_quantiles():
    grid = np.linspace(0.0, 1.0, 100).reshape(2, 50, 1)
    chains = chain_set(np.concatenate([grid, grid], axis=2), ["theta_old[0]", "theta_new[0]"])
    row = inference.posterior_prevalence(chains).iloc[0]
    assert row["mean"] == pytest.approx(0.5)
    assert row["q2.5"] == pytest.approx(0.025)
    assert row["q97.5"] == pytest.approx(0.975)


def test_summaries_need_draws():
    with pytest.raises(DimensionMismatch):
        inference.summarize_draws(np.array([]))


def test_chain_set_shape_checks():
    with pytest.raises(DimensionMismatch):
        chain_set(np.zeros((2, 5, 3)), ["a", "b"])


def test_divergence_rate_flags_unreliable_runs():
    chains = chain_set(np.zeros((2, 10, 1)), ["b0"])
    chains.divergent[:, :3] = True
    assert chains.divergence_rate == pytest.approx(0.3)
    assert chains.unreliable


def test_run_nuts_needs_two_chains(vae_spec):
    with pytest.raises(AggVAEError):
        inference.run_nuts(vae_spec, chains=1, warmup=10, samples=10, seed=1)


def test_run_nuts_is_reproducible_across_thread_counts(vae_spec):
    a = inference.run_nuts(vae_spec, chains=2, warmup=40, samples=30, seed=11, threads=1)
    b = inference.run_nuts(vae_spec, chains=2, warmup=40, samples=30, seed=11, threads=2)

    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.draws.shape == (2, 30, len(a.names))
    assert a.seeds == [[11, 5, 0], [11, 5, 1]]
    assert a.labels_new == ("n0", "n1", "n2")
    theta = np.concatenate([a.theta(Era.OLD), a.theta(Era.NEW)], axis=2)
    assert np.all((theta > 0) & (theta < 1))
    table = inference.posterior_prevalence(a)
    assert isinstance(table, pd.DataFrame) and len(table) == 5


@pytest.mark.slow
def test_empty_data_recovers_the_prior(small_data, decoder_factory):
    old, new = small_data
    spec = inference.ModelSpec(
        ModelKind.AGGVAE,
        inference.PrevalenceData.zeros(old.labels),
        inference.PrevalenceData.zeros(new.labels),
        decoder=decoder_factory(2, 3, latent_dim=2),
    )
    chains = inference.run_nuts(spec, chains=4, warmup=500, samples=2000, seed=3)

    b0 = chains.column("b0")
    assert b0.mean() == pytest.approx(0.0, abs=0.5)
    assert b0.std() == pytest.approx(5.0, rel=0.1)
    z = chains.block("z")
    assert np.abs(z.mean(axis=(0, 1))).max() < 0.15
    np.testing.assert_allclose(z.std(axis=(0, 1)), 1.0, rtol=0.1)


@pytest.mark.slow
def test_intercept_only_data_concentrates_near_crude_rate(data_factory, decoder_factory):
    # every unit at 30%: the posterior prevalence should settle near it
    old = data_factory(["o0", "o1"], [500, 500], [150, 150])
    new = data_factory(["n0", "n1", "n2"], [500, 500, 500], [150, 150, 150])
    spec = inference.ModelSpec(ModelKind.AGGVAE, old, new, decoder=decoder_factory(2, 3, latent_dim=2))
    chains = inference.run_nuts(spec, chains=2, warmup=300, samples=500, seed=8)
    table = inference.posterior_prevalence(chains)
    np.testing.assert_allclose(table["mean"], 0.3, atol=0.03)
