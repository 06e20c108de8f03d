import numpy as np
import pytest
from scipy import integrate

from aggvae import priors
from aggvae._classes import Family
from aggvae.errors import AggVAEError, CholeskyError, PrecisionSpecError

PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_rbf_covariance_entries():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    kernel = priors.KernelSpec(variance=2.0, lengthscale=0.5)
    K = priors.rbf_covariance(points, kernel)

    np.testing.assert_allclose(np.diag(K), 2.0)
    np.testing.assert_allclose(K, K.T)
    assert K[0, 1] == pytest.approx(2.0 * np.exp(-1.0 / (2 * 0.25)))
    assert K[0, 2] == pytest.approx(2.0 * np.exp(-4.0 / (2 * 0.25)))


def test_kernel_rejects_non_positive():
    with pytest.raises(AggVAEError):
        priors.KernelSpec(variance=0.0, lengthscale=1.0)
    with pytest.raises(AggVAEError):
        priors.KernelSpec(variance=1.0, lengthscale=-1.0)


def test_jitter_rescues_rank_deficient_covariance():
    cov = np.ones((4, 4))
    L, jitter = priors.cholesky_with_jitter(cov)
    assert jitter > 0
    np.testing.assert_allclose(L @ L.T, cov + jitter * np.eye(4), atol=1e-12)


def test_jitter_ladder_gives_up_on_indefinite_matrix():
    with pytest.raises(CholeskyError) as info:
        priors.cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.jitter == pytest.approx(1e-4)


def test_asymmetric_covariance_is_rejected():
    with pytest.raises(CholeskyError):
        priors.cholesky_with_jitter(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_mvn_sample_is_seed_deterministic():
    cov = priors.rbf_covariance(np.random.default_rng(0).uniform(size=(10, 2)), priors.KernelSpec(1.0, 0.3))
    a = priors.sample_mvn_cov(cov, seed=42)
    b = priors.sample_mvn_cov(cov, seed=42)
    c = priors.sample_mvn_cov(cov, seed=43)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.seed == 42


def test_mvn_sample_covariance():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    generator = np.random.default_rng(3)
    draws = np.array([priors.sample_mvn_cov(cov, generator).values for _ in range(20000)])
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.06)


@pytest.mark.parametrize(
    "family, kwargs, expected",
    [
        (Family.CAR, {"tau": 2.0, "alpha": 0.5}, 2.0 * (np.eye(3) - 0.5 * PATH3)),
        (Family.ICAR, {"tau": 1.0}, np.diag([1, 2, 1]) - PATH3),
        (Family.PCAR, {"tau": 1.0, "alpha": 0.9}, np.diag([1, 2, 1]) - 0.9 * PATH3),
        (Family.LCAR, {"tau": 1.0, "alpha": 0.3}, 0.3 * (np.diag([1, 2, 1]) - PATH3) + 0.7 * np.eye(3)),
        (Family.BYM, {"tau_s": 2.0, "tau_iid": 4.0}, (np.diag([1, 2, 1]) - PATH3) / 2.0 + np.eye(3) / 4.0),
    ],
)
def test_car_precision_families(family, kwargs, expected):
    Q = priors.car_precision(priors.PrecisionSpec(family, PATH3, **kwargs))
    np.testing.assert_allclose(Q, expected)


def test_icar_rows_sum_to_zero():
    Q = priors.car_precision(priors.PrecisionSpec(Family.ICAR, PATH3))
    np.testing.assert_allclose(Q.sum(axis=1), 0.0)


@pytest.mark.parametrize(
    "spec",
    [
        priors.PrecisionSpec(Family.PCAR, PATH3, alpha=1.0),
        priors.PrecisionSpec(Family.CAR, PATH3),
        priors.PrecisionSpec(Family.BYM, PATH3, tau_s=1.0),
        priors.PrecisionSpec("SAR", PATH3),
        priors.PrecisionSpec(Family.ICAR, np.array([[0, 1], [0, 0]])),
        priors.PrecisionSpec(Family.ICAR, np.array([[1, 1], [1, 0]])),
    ],
)
def test_invalid_precision_specs(spec):
    with pytest.raises(PrecisionSpecError):
        priors.car_precision(spec)


def test_precision_sampling_matches_inverse():
    spec = priors.PrecisionSpec(Family.PCAR, PATH3, tau=1.0, alpha=0.8)
    generator = np.random.default_rng(8)
    draws = np.array([priors.sample_mvn_precision(spec, generator).values for _ in range(20000)])
    np.testing.assert_allclose(np.cov(draws.T), np.linalg.inv(priors.car_precision(spec)), atol=0.1)


def test_icar_cannot_be_sampled():
    with pytest.raises(PrecisionSpecError):
        priors.sample_mvn_precision(priors.PrecisionSpec(Family.ICAR, PATH3), seed=1)


def test_hyperparameter_draws_follow_prior():
    hp = priors.HyperPriorSpec()
    generator = np.random.default_rng(4)
    draws = [priors.sample_hyperparameters(hp, generator) for _ in range(20000)]
    lengthscales = np.array([k.lengthscale for k in draws])
    sigmas = np.array([k.sigma for k in draws])

    assert np.all(lengthscales > 0) and np.all(sigmas > 0)
    # InvGamma(3, 3) median is 3 / median(Gamma(3)); HalfNormal(0.05) mean is 0.05 * sqrt(2 / pi)
    assert np.median(lengthscales) == pytest.approx(3.0 / 2.674, rel=0.05)
    assert sigmas.mean() == pytest.approx(0.05 * np.sqrt(2 / np.pi), rel=0.03)


def test_hyperprior_gradient(numeric_grad, rel_err):
    hp = priors.HyperPriorSpec()
    point = np.array([0.9, 0.07])
    _, d_l, d_sigma = priors.log_hyperprior_and_grad(point[0], point[1], hp)
    expected = numeric_grad(lambda x: priors.log_hyperprior(x[0], x[1], hp), point)
    assert rel_err([d_l, d_sigma], expected) < 1e-6


def test_hyperprior_outside_support():
    hp = priors.HyperPriorSpec()
    assert priors.log_hyperprior(-1.0, 0.1, hp) == -np.inf
    assert priors.log_hyperprior(1.0, 0.0, hp) == -np.inf
    assert np.isfinite(priors.log_density_hyperpriors(priors.KernelSpec(0.01, 1.0), hp))


def test_hyperprior_density_at_lengthscale_mode():
    hp = priors.HyperPriorSpec()
    l, sigma = 0.75, 0.05
    # InvGamma(3, 3): 3^3 / Gamma(3) * l^-4 * exp(-3 / l); half-normal with scale 0.05
    expected = (
        np.log(27.0 / 2.0) - 4.0 * np.log(l) - 3.0 / l
        + 0.5 * np.log(2.0 / np.pi) - np.log(0.05) - 0.5 * (sigma / 0.05) ** 2
    )
    value = priors.log_density_hyperpriors(priors.KernelSpec(variance=sigma ** 2, lengthscale=l), hp)
    assert value == pytest.approx(expected, rel=1e-12)


def test_hyperprior_density_integrates_to_one():
    hp = priors.HyperPriorSpec()
    mass, _ = integrate.dblquad(
        lambda sigma, l: np.exp(priors.log_hyperprior(l, sigma, hp)),
        0.0,
        50.0,
        0.0,
        1.0,
        epsabs=1e-6,
    )
    assert mass == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("n", [2, 10, 50, 100])
def test_rbf_covariance_is_positive_semidefinite(n):
    generator = np.random.default_rng(n)
    points = generator.uniform(size=(n, 2))
    for variance, lengthscale in [(1.0, 0.1), (0.3, 1.0), (2.5, 5.0)]:
        K = priors.rbf_covariance(points, priors.KernelSpec(variance, lengthscale))
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * variance


def test_rbf_covariance_flattens_for_huge_lengthscale():
    points = np.random.default_rng(3).uniform(size=(30, 2))
    K = priors.rbf_covariance(points, priors.KernelSpec(variance=1.7, lengthscale=1e6))
    np.testing.assert_allclose(K, 1.7, atol=1e-6)
