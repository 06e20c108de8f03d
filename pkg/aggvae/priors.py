import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg, stats
from scipy.spatial.distance import pdist, squareform

from . import checks, rng
from ._classes import Family
from .errors import CholeskyError, PrecisionSpecError
from .geometry import Grid

logger = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_STOP = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    variance: float
    lengthscale: float

    def __post_init__(self) -> None:
        checks.positive_real(self.variance, "variance")
        checks.positive_real(self.lengthscale, "lengthscale")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class HyperPriorSpec:
    """InverseGamma prior on the lengthscale and half-normal prior on sigma.

    ``sigma_scale`` is the standard deviation of the normal that is folded,
    so N+(0.05) reads as scale 0.05.
    """

    lengthscale_shape: float = 3.0
    lengthscale_scale: float = 3.0
    sigma_scale: float = 0.05

    def __post_init__(self) -> None:
        if not self.lengthscale_shape > 1:
            raise ValueError("lengthscale_shape must exceed 1 so the prior mean is finite.")
        checks.positive_real(self.lengthscale_scale, "lengthscale_scale")
        checks.positive_real(self.sigma_scale, "sigma_scale")


@dataclass(frozen=True)
class PrecisionSpec:
    family: str
    adjacency: np.ndarray
    tau: float = 1.0
    alpha: Optional[float] = None
    tau_s: Optional[float] = None
    tau_iid: Optional[float] = None


@dataclass(frozen=True)
class MVNSample:
    values: np.ndarray
    seed: Optional[int]

    def __len__(self) -> int:
        return len(self.values)


def rbf_covariance(grid: Union[Grid, np.ndarray], kernel: KernelSpec) -> np.ndarray:
    points = grid.points if isinstance(grid, Grid) else np.atleast_2d(np.asarray(grid, dtype=float))
    checks.positive_int(len(points), "number of points")
    d2 = squareform(pdist(points, "sqeuclidean"))
    return kernel.variance * np.exp(-d2 / (2.0 * kernel.lengthscale ** 2))


def car_precision(spec: PrecisionSpec) -> np.ndarray:
    if spec.family not in Family.TYPES:
        raise PrecisionSpecError(f"Unknown family {spec.family!r}; expected one of {Family.TYPES}.")

    A = np.asarray(spec.adjacency, dtype=float)
    checks.adjacency(A)
    K = A.shape[0]
    D = np.diag(A.sum(axis=1))
    I = np.eye(K)

    if spec.family in Family.WITH_ALPHA:
        if spec.alpha is None or not 0.0 <= spec.alpha < 1.0:
            raise PrecisionSpecError(f"{spec.family} needs alpha in [0, 1), got {spec.alpha!r}.")

    if spec.family == Family.BYM:
        if spec.tau_s is None or spec.tau_iid is None:
            raise PrecisionSpecError("BYM needs both tau_s and tau_iid.")
        checks.positive_real(spec.tau_s, "tau_s", error=PrecisionSpecError)
        checks.positive_real(spec.tau_iid, "tau_iid", error=PrecisionSpecError)
        return (D - A) / spec.tau_s + I / spec.tau_iid

    checks.positive_real(spec.tau, "tau", error=PrecisionSpecError)
    tau, alpha = spec.tau, spec.alpha

    if spec.family == Family.CAR:
        return tau * (I - alpha * A)
    if spec.family == Family.ICAR:
        return tau * (D - A)
    if spec.family == Family.PCAR:
        return tau * (D - alpha * A)
    # LCAR
    return tau * (alpha * (D - A) + (1.0 - alpha) * I)


def cholesky_with_jitter(cov: np.ndarray, jitter: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``cov + jitter * I``, escalating jitter x10 on failure.

    The ladder runs from 1e-8 to 1e-4 times the mean diagonal. Returns the
    factor and the jitter that worked.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
        raise CholeskyError("Covariance matrix is not symmetric.", jitter=jitter)

    scale = float(np.mean(np.diag(cov)))
    ladder = [JITTER_START * scale]
    while ladder[-1] < JITTER_STOP * scale * (1 - 1e-9):
        ladder.append(ladder[-1] * 10.0)

    attempts = [ladder[0] if jitter is None else float(jitter)]
    attempts += [value for value in ladder if value > attempts[0]]

    eye = np.eye(len(cov))
    for value in attempts:
        try:
            factor = linalg.cholesky(cov + value * eye, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            logger.debug("Cholesky failed at jitter %.3g, escalating", value)
            continue
        return factor, value

    raise CholeskyError(f"Cholesky failed up to jitter {attempts[-1]:.3g}.", jitter=attempts[-1])


def sample_mvn_cov(cov: np.ndarray, seed, jitter: Optional[float] = None) -> MVNSample:
    factor, _ = cholesky_with_jitter(cov, jitter)
    generator = rng.as_generator(seed, rng.MVN)
    eps = generator.standard_normal(len(factor))
    return MVNSample(values=factor @ eps, seed=seed if isinstance(seed, int) else None)


def sample_mvn_precision(spec: Union[PrecisionSpec, np.ndarray], seed) -> MVNSample:
    """Draw from N(0, Q^-1) for a proper precision matrix Q."""
    if isinstance(spec, PrecisionSpec):
        if spec.family == Family.ICAR:
            raise PrecisionSpecError("iCAR precision is improper and cannot be sampled directly.")
        Q = car_precision(spec)
    else:
        Q = np.asarray(spec, dtype=float)

    try:
        factor = linalg.cholesky(Q, lower=True)
    except np.linalg.LinAlgError as exc:
        raise PrecisionSpecError("Precision matrix is not positive definite.") from exc

    generator = rng.as_generator(seed, rng.MVN)
    eps = generator.standard_normal(len(Q))
    values = linalg.solve_triangular(factor.T, eps, lower=False)
    return MVNSample(values=values, seed=seed if isinstance(seed, int) else None)


def sample_hyperparameters(hp: HyperPriorSpec, seed) -> KernelSpec:
    generator = rng.as_generator(seed, rng.HYPER)
    lengthscale = stats.invgamma.rvs(
        hp.lengthscale_shape, scale=hp.lengthscale_scale, random_state=generator
    )
    sigma = stats.halfnorm.rvs(scale=hp.sigma_scale, random_state=generator)
    # strictly positive
    sigma = max(float(sigma), np.finfo(float).tiny)
    return KernelSpec(variance=sigma ** 2, lengthscale=float(lengthscale))


def log_hyperprior_and_grad(lengthscale: float, sigma: float, hp: HyperPriorSpec) -> Tuple[float, float, float]:
    """Log density of (lengthscale, sigma) under ``hp`` with its partial derivatives."""
    if not (lengthscale > 0 and sigma > 0 and np.isfinite(lengthscale) and np.isfinite(sigma)):
        return -np.inf, 0.0, 0.0

    a, b, s = hp.lengthscale_shape, hp.lengthscale_scale, hp.sigma_scale
    value = stats.invgamma.logpdf(lengthscale, a, scale=b) + stats.halfnorm.logpdf(sigma, scale=s)
    d_lengthscale = -(a + 1.0) / lengthscale + b / lengthscale ** 2
    d_sigma = -sigma / s ** 2
    return float(value), float(d_lengthscale), float(d_sigma)


def log_hyperprior(lengthscale: float, sigma: float, hp: HyperPriorSpec) -> float:
    return log_hyperprior_and_grad(lengthscale, sigma, hp)[0]


def log_density_hyperpriors(kernel: KernelSpec, hp: HyperPriorSpec) -> float:
    return log_hyperprior(kernel.lengthscale, kernel.sigma, hp)
