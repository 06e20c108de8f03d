"""Binomial prevalence models on two boundary systems and their NUTS driver.

Both models share the likelihood

    n_pos_i ~ Binomial(n_tests_i, logistic(b0 + re_i))

over the K1 old and K2 new units. They differ in the spatial random effects
``re``: the exact model builds them from a whitened grid GP, ``c * M L eta``,
and the surrogate model from the frozen decoder, ``s * decode(z)``.
Positive parameters (s, lengthscale, sigma) are sampled on the log scale.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, special, stats
from scipy.spatial.distance import pdist, squareform

from . import checks, rng
from ._classes import Era, ModelKind
from .errors import DimensionMismatch, FileFormatError, NonFiniteLogDensity
from .geometry import Grid, MembershipMatrix
from .priors import HyperPriorSpec, log_hyperprior_and_grad, sample_hyperparameters
from .sampler import NUTSOptions, sample_chain
from .vae import DecoderWeights, decode_with_pullback

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
DIVERGENCE_LIMIT = 0.2
INIT_RADIUS = 2.0
INIT_ATTEMPTS = 100
# prevalence stays strictly inside (0, 1) even when expit rounds
THETA_MIN = np.nextafter(0.0, 1.0)
THETA_MAX = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class PrevalenceData:
    labels: Tuple[str, ...]
    n_tests: np.ndarray
    n_pos: np.ndarray

    def __post_init__(self) -> None:
        n_tests = np.asarray(self.n_tests)
        n_pos = np.asarray(self.n_pos)
        checks.same_length(n_tests, self.labels, "n_tests")
        checks.same_length(n_pos, self.labels, "n_pos")
        for name, values in (("n_tests", n_tests), ("n_pos", n_pos)):
            if values.size and (np.any(values != np.round(values)) or np.any(values < 0)):
                raise FileFormatError(f"{name} must hold nonnegative integers.")
        if np.any(n_pos > n_tests):
            i = int(np.argmax(n_pos > n_tests))
            raise FileFormatError(f"Unit {self.labels[i]}: n_pos {n_pos[i]} exceeds n_tests {n_tests[i]}.")

        object.__setattr__(self, "labels", tuple(str(label) for label in self.labels))
        object.__setattr__(self, "n_tests", n_tests.astype(np.int64))
        object.__setattr__(self, "n_pos", n_pos.astype(np.int64))

    @property
    def K(self) -> int:
        return len(self.labels)

    def crude(self) -> np.ndarray:
        """n_pos / n_tests per unit, NaN where nobody was tested."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.n_tests > 0, self.n_pos / np.maximum(self.n_tests, 1), np.nan)

    def reindex(self, labels: Sequence[str]) -> "PrevalenceData":
        """Rows reordered to ``labels``, the order of the matching polygon set."""
        position = {label: i for i, label in enumerate(self.labels)}
        missing = [str(label) for label in labels if str(label) not in position]
        if missing or len(labels) != self.K:
            raise DimensionMismatch(
                f"Data units do not match the boundary units (missing: {missing[:5]}, "
                f"{self.K} rows for {len(labels)} polygons)."
            )
        order = [position[str(label)] for label in labels]
        return PrevalenceData(tuple(labels), self.n_tests[order], self.n_pos[order])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"unit": list(self.labels), "n_tests": self.n_tests, "n_pos": self.n_pos})

    @classmethod
    def zeros(cls, labels: Sequence[str]) -> "PrevalenceData":
        K = len(labels)
        return cls(tuple(labels), np.zeros(K, dtype=int), np.zeros(K, dtype=int))


def load_prevalence(path: Union[str, Path]) -> PrevalenceData:
    try:
        frame = pd.read_csv(path, comment="#", dtype={"unit": str})
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"Cannot read prevalence data {path}: {exc}") from exc

    missing = {"unit", "n_tests", "n_pos"} - set(frame.columns)
    if missing:
        raise FileFormatError(f"{path}: missing columns {sorted(missing)}.")
    if frame["unit"].duplicated().any():
        raise FileFormatError(f"{path}: duplicated unit labels.")
    if frame[["n_tests", "n_pos"]].isna().any().any():
        raise FileFormatError(f"{path}: empty count cells.")

    return PrevalenceData(
        labels=tuple(frame["unit"]),
        n_tests=frame["n_tests"].to_numpy(),
        n_pos=frame["n_pos"].to_numpy(),
    )


def write_prevalence(data: PrevalenceData, path: Union[str, Path], provenance: Optional[Dict] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in sorted((provenance or {}).items()):
            fh.write(f"# {key} = {value}\n")
        data.to_frame().to_csv(fh, index=False)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    data_old: PrevalenceData
    data_new: PrevalenceData
    grid: Optional[Grid] = None
    M_old: Optional[MembershipMatrix] = None
    M_new: Optional[MembershipMatrix] = None
    decoder: Optional[DecoderWeights] = None
    hyperpriors: HyperPriorSpec = field(default_factory=HyperPriorSpec)
    intercept_scale: float = 5.0
    s_scale: float = 1.0
    # relative jitter on the unit-variance correlation matrix
    jitter: float = 1e-6

    def __post_init__(self) -> None:
        if self.kind not in ModelKind.TYPES:
            raise ValueError(f"Unknown model kind {self.kind!r}; expected one of {ModelKind.TYPES}.")
        has_geometry = self.grid is not None and self.M_old is not None and self.M_new is not None
        has_decoder = self.decoder is not None
        if self.kind == ModelKind.AGGGP and not (has_geometry and not has_decoder):
            raise ValueError("aggGP needs grid and membership matrices and no decoder.")
        if self.kind == ModelKind.AGGVAE and not (has_decoder and self.grid is None):
            raise ValueError("aggVAE needs a decoder and no grid.")

        checks.positive_real(self.intercept_scale, "intercept_scale")
        checks.positive_real(self.s_scale, "s_scale")
        if has_geometry:
            for M in (self.M_old, self.M_new):
                if M.grid_id != self.grid.grid_id:
                    raise DimensionMismatch(f"Membership matrix {M.polygon_set_name!r} was built on another grid.")
            checks.same_length(self.data_old.labels, range(self.M_old.K), "old data units")
            checks.same_length(self.data_new.labels, range(self.M_new.K), "new data units")
        if has_decoder:
            if (self.decoder.K1, self.decoder.K2) != (self.data_old.K, self.data_new.K):
                raise DimensionMismatch(
                    f"Decoder produces {self.decoder.K1}+{self.decoder.K2} units, "
                    f"data has {self.data_old.K}+{self.data_new.K}."
                )

    @property
    def K1(self) -> int:
        return self.data_old.K

    @property
    def K2(self) -> int:
        return self.data_new.K


# ---------------------------
# Likelihood
# ---------------------------


def log_likelihood_and_grad(logit: np.ndarray, n_tests: np.ndarray, n_pos: np.ndarray) -> Tuple[float, np.ndarray]:
    """Binomial log-pmf summed over units, and its gradient in the logits."""
    logit = np.asarray(logit, dtype=float)
    log_choose = special.gammaln(n_tests + 1.0) - special.gammaln(n_pos + 1.0) - special.gammaln(n_tests - n_pos + 1.0)
    # log(theta) and log(1 - theta) without overflow
    log_theta = -np.logaddexp(0.0, -logit)
    log_1m_theta = -np.logaddexp(0.0, logit)
    value = np.sum(log_choose + n_pos * log_theta + (n_tests - n_pos) * log_1m_theta)
    grad = n_pos - n_tests * special.expit(logit)
    return float(value), grad


def log_likelihood(theta_or_logit: np.ndarray, spec: ModelSpec, is_logit: bool = True) -> float:
    logit = theta_or_logit if is_logit else special.logit(theta_or_logit)
    n_tests = np.concatenate([spec.data_old.n_tests, spec.data_new.n_tests])
    n_pos = np.concatenate([spec.data_old.n_pos, spec.data_new.n_pos])
    return log_likelihood_and_grad(logit, n_tests, n_pos)[0]


def _log_normal(x: float, scale: float) -> Tuple[float, float]:
    return float(stats.norm.logpdf(x, scale=scale)), -x / scale ** 2


def _log_halfnormal_on_log_scale(log_x: float, scale: float) -> Tuple[float, float]:
    """Half-normal log density of x = exp(log_x) plus the log Jacobian, and d/dlog_x."""
    x = math.exp(log_x)
    value = float(stats.halfnorm.logpdf(x, scale=scale)) + log_x
    return value, 1.0 - x * x / scale ** 2


def _raise_non_finite(value: float, grad: np.ndarray, q: np.ndarray, names: Sequence[str]) -> None:
    if np.isfinite(value) and np.all(np.isfinite(grad)):
        return
    shown = {name: float(v) for name, v in list(zip(names, q))[:8]}
    raise NonFiniteLogDensity(f"Log posterior is {value} at {shown}.", params=dict(zip(names, map(float, q))))


# ---------------------------
# aggVAE: logit = b0 + s * decode(z)
# ---------------------------


def log_posterior_aggvae(q: np.ndarray, spec: ModelSpec) -> Tuple[float, np.ndarray]:
    """Log posterior over ``[b0, log_s, z_1..z_d]`` and its exact gradient."""
    q = np.asarray(q, dtype=float)
    decoder = spec.decoder
    d = decoder.latent_dim
    if q.shape != (2 + d,):
        raise DimensionMismatch(f"aggVAE parameter vector must have length {2 + d}, got {q.shape}.")

    b0, log_s, z = q[0], q[1], q[2:]
    with np.errstate(over="ignore", invalid="ignore"):
        s = math.exp(log_s) if log_s < 700 else math.inf
        y, pullback = decode_with_pullback(z, decoder)
        logit = b0 + s * y

        n_tests = np.concatenate([spec.data_old.n_tests, spec.data_new.n_tests])
        n_pos = np.concatenate([spec.data_old.n_pos, spec.data_new.n_pos])
        ll, g = log_likelihood_and_grad(logit, n_tests, n_pos)

        lp_b0, d_b0 = _log_normal(b0, spec.intercept_scale)
        lp_s, d_log_s = _log_halfnormal_on_log_scale(log_s, spec.s_scale) if np.isfinite(s) else (-math.inf, 0.0)
        lp_z = -0.5 * float(z @ z) - 0.5 * d * LOG_2PI

        grad = np.empty_like(q)
        grad[0] = np.sum(g) + d_b0
        grad[1] = s * float(g @ y) + d_log_s
        grad[2:] = pullback(s * g) - z

    value = ll + lp_b0 + lp_s + lp_z
    _raise_non_finite(value, grad, q, aggvae_names(spec))
    return value, grad


def aggvae_names(spec: ModelSpec) -> List[str]:
    return ["b0", "log_s"] + [f"z[{i}]" for i in range(spec.decoder.latent_dim)]


# ---------------------------
# aggGP: logit = b0 + c * M (sigma * L(l) eta)
# ---------------------------


@dataclass(frozen=True)
class _GridCache:
    sqdist: np.ndarray
    M_joint: np.ndarray
    cell_area: float


def _grid_cache(spec: ModelSpec) -> _GridCache:
    return _GridCache(
        sqdist=squareform(pdist(spec.grid.points, "sqeuclidean")),
        M_joint=np.vstack([spec.M_old.dense(), spec.M_new.dense()]),
        cell_area=spec.grid.cell_area,
    )


def _phi(S: np.ndarray) -> np.ndarray:
    """Lower triangle with the diagonal halved."""
    out = np.tril(S)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def log_posterior_agggp(
    q: np.ndarray, spec: ModelSpec, cache: Optional[_GridCache] = None
) -> Tuple[float, np.ndarray]:
    """Log posterior over ``[b0, log_l, log_sigma, eta_1..eta_n]`` and its exact gradient.

    The lengthscale gradient differentiates the Cholesky factor by forward
    sensitivity: dL = L Phi(L^-1 dK L^-T). Returns -inf with a zero gradient
    when the correlation matrix cannot be factorized.
    """
    q = np.asarray(q, dtype=float)
    cache = cache or _grid_cache(spec)
    n = spec.grid.n
    if q.shape != (3 + n,):
        raise DimensionMismatch(f"aggGP parameter vector must have length {3 + n}, got {q.shape}.")

    b0, log_l, log_sigma, eta = q[0], q[1], q[2], q[3:]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        lengthscale = math.exp(log_l) if log_l < 700 else math.inf
        sigma = math.exp(log_sigma) if log_sigma < 700 else math.inf
        lp_hyper, d_l, d_sigma = log_hyperprior_and_grad(lengthscale, sigma, spec.hyperpriors)
        if not np.isfinite(lp_hyper):
            return -math.inf, np.zeros_like(q)

        R = np.exp(-cache.sqdist / (2.0 * lengthscale ** 2))
        R[np.diag_indices_from(R)] += spec.jitter
        try:
            L = linalg.cholesky(R, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            logger.debug("Cholesky rejected at lengthscale %.4g", lengthscale)
            return -math.inf, np.zeros_like(q)

        u = L @ eta
        f = sigma * u
        c = cache.cell_area
        logit = b0 + c * (cache.M_joint @ f)

        n_tests = np.concatenate([spec.data_old.n_tests, spec.data_new.n_tests])
        n_pos = np.concatenate([spec.data_old.n_pos, spec.data_new.n_pos])
        ll, g = log_likelihood_and_grad(logit, n_tests, n_pos)
        g_f = c * (cache.M_joint.T @ g)

        # dR/dlog_l, then the factor's sensitivity
        dR = R * cache.sqdist / lengthscale ** 2
        X = linalg.solve_triangular(L, dR, lower=True)
        S = linalg.solve_triangular(L, X.T, lower=True)
        dL = L @ _phi(S)

        lp_b0, d_b0 = _log_normal(b0, spec.intercept_scale)
        lp_eta = -0.5 * float(eta @ eta) - 0.5 * n * LOG_2PI
        # log Jacobians of l = exp(log_l) and sigma = exp(log_sigma)
        lp_hyper += log_l + log_sigma

        grad = np.empty_like(q)
        grad[0] = np.sum(g) + d_b0
        grad[1] = sigma * float(g_f @ (dL @ eta)) + d_l * lengthscale + 1.0
        grad[2] = float(g_f @ f) + d_sigma * sigma + 1.0
        grad[3:] = sigma * (L.T @ g_f) - eta

    value = ll + lp_b0 + lp_hyper + lp_eta
    _raise_non_finite(value, grad, q, agggp_names(spec))
    return value, grad


def agggp_names(spec: ModelSpec) -> List[str]:
    return ["b0", "log_l", "log_sigma"] + [f"eta[{j}]" for j in range(spec.grid.n)]


# ---------------------------
# Models
# ---------------------------


class Model:
    """Sampling target plus the derived columns recorded with every draw."""

    kind: str = ""
    names: List[str] = []
    hyper_names: List[str] = []

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return len(self.names)

    def log_density(self, q: np.ndarray) -> Tuple[float, np.ndarray]:
        raise NotImplementedError

    def target(self, q: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            return self.log_density(q)
        except NonFiniteLogDensity as exc:
            # trajectories leaving the finite region are rejected by the sampler
            logger.debug("%s", exc)
            return -math.inf, np.zeros_like(q)

    def random_effects(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hyper_values(self, q: np.ndarray) -> List[float]:
        raise NotImplementedError

    def initial_point(self, generator: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    @property
    def derived_names(self) -> List[str]:
        K1, K2 = self.spec.K1, self.spec.K2
        names = list(self.hyper_names)
        names += [f"re_{Era.OLD}[{i}]" for i in range(K1)] + [f"re_{Era.NEW}[{i}]" for i in range(K2)]
        names += [f"theta_{Era.OLD}[{i}]" for i in range(K1)] + [f"theta_{Era.NEW}[{i}]" for i in range(K2)]
        return names

    def derived(self, q: np.ndarray) -> np.ndarray:
        re = self.random_effects(q)
        theta = np.clip(special.expit(q[0] + re), THETA_MIN, THETA_MAX)
        return np.concatenate([self.hyper_values(q), re, theta])


class AggVAEModel(Model):
    kind = ModelKind.AGGVAE
    hyper_names = ["s"]

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.names = aggvae_names(spec)

    def log_density(self, q):
        return log_posterior_aggvae(q, self.spec)

    def random_effects(self, q):
        y, _ = decode_with_pullback(q[2:], self.spec.decoder)
        return math.exp(q[1]) * y

    def hyper_values(self, q):
        return [math.exp(q[1])]

    def initial_point(self, generator):
        q = generator.uniform(-INIT_RADIUS, INIT_RADIUS, self.dim)
        # start s at a prior draw
        q[1] = math.log(max(abs(generator.normal(scale=self.spec.s_scale)), 1e-3))
        return q


class AggGPModel(Model):
    kind = ModelKind.AGGGP
    hyper_names = ["lengthscale", "sigma"]

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.names = agggp_names(spec)
        self._cache = _grid_cache(spec)

    def log_density(self, q):
        return log_posterior_agggp(q, self.spec, self._cache)

    def random_effects(self, q):
        lengthscale, sigma = math.exp(q[1]), math.exp(q[2])
        R = np.exp(-self._cache.sqdist / (2.0 * lengthscale ** 2))
        R[np.diag_indices_from(R)] += self.spec.jitter
        L = linalg.cholesky(R, lower=True)
        return self._cache.cell_area * (self._cache.M_joint @ (sigma * (L @ q[3:])))

    def hyper_values(self, q):
        return [math.exp(q[1]), math.exp(q[2])]

    def initial_point(self, generator):
        q = generator.uniform(-INIT_RADIUS, INIT_RADIUS, self.dim)
        kernel = sample_hyperparameters(self.spec.hyperpriors, generator)
        q[1] = math.log(kernel.lengthscale)
        q[2] = math.log(kernel.sigma)
        return q


def build_model(spec: ModelSpec) -> Model:
    return AggGPModel(spec) if spec.kind == ModelKind.AGGGP else AggVAEModel(spec)


# ---------------------------
# Chains
# ---------------------------


@dataclass
class ChainSet:
    """Post-warmup draws of C chains, shape (C, S, P) over ``names``.

    ``names`` lists the sampled coordinates first, then hyperparameters on
    their natural scale, the random effects and the prevalences per unit.
    """

    kind: str
    names: List[str]
    draws: np.ndarray
    warmup: int
    samples: int
    seeds: List[List[int]]
    K1: int
    K2: int
    labels_old: Tuple[str, ...] = ()
    labels_new: Tuple[str, ...] = ()
    n_leapfrog: Optional[np.ndarray] = None
    divergent: Optional[np.ndarray] = None
    accept_stat: Optional[np.ndarray] = None
    tree_depth: Optional[np.ndarray] = None
    step_size: Optional[np.ndarray] = None
    warmup_seconds: Optional[np.ndarray] = None
    sampling_seconds: Optional[np.ndarray] = None
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise DimensionMismatch(f"Draws of shape {self.draws.shape} do not match {len(self.names)} names.")
        if self.draws.shape[1] != self.samples:
            raise DimensionMismatch(f"Expected {self.samples} draws per chain, got {self.draws.shape[1]}.")
        C, S = self.draws.shape[:2]
        if self.n_leapfrog is None:
            self.n_leapfrog = np.zeros((C, S), dtype=int)
        if self.divergent is None:
            self.divergent = np.zeros((C, S), dtype=bool)
        for attr in ("warmup_seconds", "sampling_seconds"):
            if getattr(self, attr) is None:
                setattr(self, attr, np.zeros(C))
        self._index = {name: i for i, name in enumerate(self.names)}

    @property
    def chains(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, :, self._index[name]]

    def has(self, name: str) -> bool:
        return name in self._index

    def columns(self, prefix: str) -> List[str]:
        return [name for name in self.names if name.startswith(prefix + "[")]

    def block(self, prefix: str) -> np.ndarray:
        """(C, S, k) slice for every ``prefix[i]`` column."""
        idx = [self._index[name] for name in self.columns(prefix)]
        return self.draws[:, :, idx]

    def theta(self, era: str) -> np.ndarray:
        return self.block(f"theta_{era}")

    @property
    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent)) if self.divergent.size else 0.0

    @property
    def unreliable(self) -> bool:
        return self.divergence_rate > DIVERGENCE_LIMIT

    @property
    def sampling_time(self) -> float:
        """Wall-clock of the post-warmup phase; chains run side by side, so the slowest counts."""
        return float(np.max(self.sampling_seconds)) if len(self.sampling_seconds) else 0.0

    @property
    def elapsed(self) -> float:
        return float(np.max(self.warmup_seconds + self.sampling_seconds)) if len(self.sampling_seconds) else 0.0


def _run_chain(model: Model, chain: int, warmup: int, samples: int, seed: int, options: NUTSOptions):
    generator = rng.stream(seed, rng.NUTS, chain)
    for _ in range(INIT_ATTEMPTS):
        q0 = model.initial_point(generator)
        value = model.target(q0)[0]
        if np.isfinite(value):
            break
    else:
        raise NonFiniteLogDensity(
            f"Chain {chain}: no finite starting point in {INIT_ATTEMPTS} attempts (last log density {value}).",
            params=q0,
            chain=chain,
            value=value,
        )
    result = sample_chain(model.target, q0, warmup, samples, generator, options, chain=chain)
    derived = np.vstack([model.derived(q) for q in result.draws]) if samples else np.empty((0, 0))
    return result, derived


def run_nuts(
    model: Union[Model, ModelSpec],
    chains: int,
    warmup: int,
    samples: int,
    seed: int,
    options: Optional[NUTSOptions] = None,
    threads: Optional[int] = None,
    provenance: Optional[Dict] = None,
) -> ChainSet:
    if isinstance(model, ModelSpec):
        model = build_model(model)
    checks.positive_int(chains, "chains", minimum=2)
    checks.positive_int(warmup, "warmup")
    checks.positive_int(samples, "samples")
    options = options or NUTSOptions()

    logger.info(
        "%s: %d chains x (%d warmup + %d samples) over %d parameters",
        model.kind,
        chains,
        warmup,
        samples,
        model.dim,
    )
    with ThreadPoolExecutor(max_workers=threads) as executor:
        results = list(
            executor.map(lambda c: _run_chain(model, c, warmup, samples, seed, options), range(chains))
        )

    draws = np.stack([np.hstack([result.draws, derived]) for result, derived in results])
    chain_set = ChainSet(
        kind=model.kind,
        names=list(model.names) + model.derived_names,
        draws=draws,
        warmup=warmup,
        samples=samples,
        seeds=[[int(seed), rng.NUTS, c] for c in range(chains)],
        K1=model.spec.K1,
        K2=model.spec.K2,
        labels_old=model.spec.data_old.labels,
        labels_new=model.spec.data_new.labels,
        n_leapfrog=np.stack([r.n_leapfrog for r, _ in results]),
        divergent=np.stack([r.divergent for r, _ in results]),
        accept_stat=np.stack([r.accept_stat for r, _ in results]),
        tree_depth=np.stack([r.tree_depth for r, _ in results]),
        step_size=np.array([r.step_size for r, _ in results]),
        warmup_seconds=np.array([r.warmup_seconds for r, _ in results]),
        sampling_seconds=np.array([r.sampling_seconds for r, _ in results]),
        provenance=dict(provenance or {}),
    )

    if chain_set.unreliable:
        logger.warning(
            "%s: %.1f%% of post-warmup transitions diverged; results are unreliable",
            model.kind,
            100.0 * chain_set.divergence_rate,
        )
    return chain_set


# ---------------------------
# Summaries
# ---------------------------


def summarize_draws(values: np.ndarray) -> Dict[str, float]:
    """Mean and central 95% interval, quantiles by linear interpolation."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise DimensionMismatch("No draws to summarize.")
    low, high = np.quantile(values, [0.025, 0.975])
    return {"mean": float(values.mean()), "q2.5": float(low), "q97.5": float(high)}


def posterior_prevalence(chains: ChainSet) -> pd.DataFrame:
    """Per-unit prevalence summaries from the pooled post-warmup draws of both eras."""
    rows = []
    for era, labels in ((Era.OLD, chains.labels_old), (Era.NEW, chains.labels_new)):
        theta = chains.theta(era)
        for i in range(theta.shape[2]):
            row = {"era": era, "unit": i, "label": labels[i] if labels else str(i)}
            row.update(summarize_draws(theta[:, :, i]))
            rows.append(row)
    return pd.DataFrame(rows, columns=["era", "unit", "label", "mean", "q2.5", "q97.5"])
