"""Variational autoencoder for joint aggregate draws.

Encoder and decoder are plain multilayer perceptrons with hand-written
backpropagation. The trained decoder, together with the standardization it
inverts, is the reusable prior: ``decode(z)`` for ``z ~ N(0, I_d)`` gives a
draw on the original aggregate scale.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import checks, rng
from ._classes import Activation
from .aggregate import JointAggregate, stack
from .errors import DimensionMismatch, TrainingDiverged

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MLPSpec:
    layer_sizes: Tuple[int, ...]
    activation: str = Activation.TANH

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(size) for size in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("An MLP needs at least an input and an output layer.")
        for size in self.layer_sizes:
            checks.positive_int(size, "layer size", error=ValueError)
        if self.activation not in Activation.TYPES:
            raise ValueError(f"Activation must be one of {Activation.TYPES}, got {self.activation!r}.")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def shapes(self) -> List[Tuple[int, ...]]:
        shapes = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes


def default_spec(
    K: int,
    latent_dim: Optional[int] = None,
    hidden: Optional[Sequence[int]] = None,
    activation: str = Activation.TANH,
) -> MLPSpec:
    """Encoder spec: two hidden layers of width 4K and d = ceil(K / 4) unless given."""
    d = latent_dim or math.ceil(K / 4)
    widths = list(hidden) if hidden else [4 * K, 4 * K]
    return MLPSpec(layer_sizes=(K, *widths, 2 * d), activation=activation)


def decoder_spec(encoder: MLPSpec) -> MLPSpec:
    d = encoder.n_out // 2
    hidden = encoder.layer_sizes[1:-1][::-1]
    return MLPSpec(layer_sizes=(d, *hidden, encoder.n_in), activation=encoder.activation)


# ---------------------------
# MLP forward / backward
# ---------------------------


def init_params(spec: MLPSpec, generator: np.random.Generator) -> List[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        std = math.sqrt(2.0 / (fan_in + fan_out))
        params.append(generator.normal(0.0, std, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def _activate(h: np.ndarray, activation: str) -> np.ndarray:
    if activation == Activation.TANH:
        return np.tanh(h)
    return np.maximum(h, 0.0)


def _activate_grad(h: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == Activation.TANH:
        return 1.0 - a * a
    # subgradient 0 at h == 0
    return (h > 0.0).astype(float)


def forward(params: Sequence[np.ndarray], x: np.ndarray, activation: str):
    """Returns the output and the per-layer cache needed by ``backward``."""
    n_layers = len(params) // 2
    a = x
    cache = []
    for layer in range(n_layers):
        W, b = params[2 * layer], params[2 * layer + 1]
        h = a @ W + b
        if layer < n_layers - 1:
            out = _activate(h, activation)
        else:
            out = h
        cache.append((a, h, out))
        a = out
    return a, cache


def backward(params: Sequence[np.ndarray], cache, grad_out: np.ndarray, activation: str):
    """Gradients w.r.t. every parameter and w.r.t. the network input."""
    n_layers = len(params) // 2
    grads: List[np.ndarray] = [None] * len(params)
    delta = grad_out
    for layer in reversed(range(n_layers)):
        a_in, h, out = cache[layer]
        if layer < n_layers - 1:
            delta = delta * _activate_grad(h, out, activation)
        W = params[2 * layer]
        grads[2 * layer] = a_in.T @ delta if delta.ndim == 2 else np.outer(a_in, delta)
        grads[2 * layer + 1] = delta.sum(axis=0) if delta.ndim == 2 else delta.copy()
        delta = delta @ W.T
    return grads, delta


def flatten(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params])


def unflatten(vector: np.ndarray, like: Sequence[np.ndarray]) -> List[np.ndarray]:
    out, offset = [], 0
    for p in like:
        out.append(vector[offset : offset + p.size].reshape(p.shape))
        offset += p.size
    return out


# ---------------------------
# Weights
# ---------------------------


@dataclass(frozen=True)
class EncoderWeights:
    spec: MLPSpec
    params: Tuple[np.ndarray, ...]
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    @property
    def latent_dim(self) -> int:
        return self.spec.n_out // 2


@dataclass(frozen=True)
class DecoderWeights:
    spec: MLPSpec
    params: Tuple[np.ndarray, ...]
    latent_dim: int
    K1: int
    K2: int
    shift: np.ndarray
    scale: np.ndarray
    provenance: Dict = field(default_factory=dict)
    loss_trace: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        K = self.K1 + self.K2
        if not self.latent_dim < K:
            raise DimensionMismatch(f"Latent dimension {self.latent_dim} must be below K1 + K2 = {K}.")
        if self.spec.n_in != self.latent_dim or self.spec.n_out != K:
            raise DimensionMismatch(
                f"Decoder maps {self.spec.n_in} -> {self.spec.n_out}, expected {self.latent_dim} -> {K}."
            )
        for expected, p in zip(self.spec.shapes(), self.params):
            if p.shape != expected:
                raise DimensionMismatch(f"Parameter block of shape {p.shape}, expected {expected}.")
        if len(self.params) != len(self.spec.shapes()):
            raise DimensionMismatch("Wrong number of parameter blocks for the decoder spec.")
        for p in self.params:
            checks.finite_array(p, "decoder parameters")
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))

    @property
    def K(self) -> int:
        return self.K1 + self.K2


@dataclass(frozen=True)
class ElboReport:
    reconstruction_term: float
    kl_term: float
    total: float


@dataclass
class VAEParams:
    """Mutable training state: both networks plus the data standardization."""

    encoder_spec: MLPSpec
    encoder: List[np.ndarray]
    decoder: List[np.ndarray]
    shift: np.ndarray
    scale: np.ndarray

    @property
    def decoder_spec(self) -> MLPSpec:
        return decoder_spec(self.encoder_spec)

    @property
    def latent_dim(self) -> int:
        return self.encoder_spec.n_out // 2

    def arrays(self) -> List[np.ndarray]:
        return list(self.encoder) + list(self.decoder)

    def encoder_weights(self) -> EncoderWeights:
        return EncoderWeights(self.encoder_spec, tuple(self.encoder), self.shift, self.scale)


def init_vae(spec: MLPSpec, seed, shift=None, scale=None) -> VAEParams:
    generator = rng.as_generator(seed, rng.VAE, 0)
    K = spec.n_in
    return VAEParams(
        encoder_spec=spec,
        encoder=init_params(spec, generator),
        decoder=init_params(decoder_spec(spec), generator),
        shift=np.zeros(K) if shift is None else np.asarray(shift, dtype=float),
        scale=np.ones(K) if scale is None else np.asarray(scale, dtype=float),
    )


# ---------------------------
# Encode / decode
# ---------------------------


def encode(y: np.ndarray, encoder: EncoderWeights) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != encoder.spec.n_in:
        raise DimensionMismatch(f"Encoder expects length {encoder.spec.n_in}, got {y.shape[-1]}.")
    x = y
    if encoder.shift is not None:
        x = (y - encoder.shift) / encoder.scale
    mu, log_sigma, _ = _encoder_forward(encoder.params, x, encoder.spec)
    return mu, log_sigma


def _encoder_forward(params: Sequence[np.ndarray], x: np.ndarray, spec: MLPSpec):
    """Split the encoder's last layer into (mu_z, log_sigma_z); also returns the forward cache."""
    out, cache = forward(params, x, spec.activation)
    d = spec.n_out // 2
    return out[..., :d], out[..., d:], cache


def _check_latent(z: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != weights.latent_dim:
        raise DimensionMismatch(f"Decoder expects latent length {weights.latent_dim}, got {z.shape[-1]}.")
    return z


def decode(z: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    z = _check_latent(z, weights)
    out, _ = forward(weights.params, z, weights.spec.activation)
    return weights.shift + weights.scale * out


def decode_with_pullback(z: np.ndarray, weights: DecoderWeights) -> Tuple[np.ndarray, Callable]:
    """Decoded vector and a function mapping an output cotangent to dL/dz."""
    z = _check_latent(z, weights)
    out, cache = forward(weights.params, z, weights.spec.activation)

    def pullback(cotangent: np.ndarray) -> np.ndarray:
        _, grad_z = backward(weights.params, cache, weights.scale * cotangent, weights.spec.activation)
        return grad_z

    return weights.shift + weights.scale * out, pullback


def decoder_jacobian(z: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    """Dense K x d Jacobian, assembled row by row through the pullback."""
    _, pullback = decode_with_pullback(z, weights)
    return np.vstack([pullback(row) for row in np.eye(weights.K)])


def kl_gaussian(mu_z: np.ndarray, log_sigma_z: np.ndarray):
    mu_z = np.asarray(mu_z, dtype=float)
    log_sigma_z = np.asarray(log_sigma_z, dtype=float)
    if mu_z.shape != log_sigma_z.shape:
        raise DimensionMismatch("mu_z and log_sigma_z must have the same shape.")
    kl = 0.5 * np.sum(np.exp(2.0 * log_sigma_z) + mu_z ** 2 - 1.0 - 2.0 * log_sigma_z, axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


# ---------------------------
# Loss and gradients
# ---------------------------


def _as_batch(batch: Union[np.ndarray, Sequence[JointAggregate]]) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return np.atleast_2d(batch).astype(float)
    return stack(batch)


def elbo_and_grad(
    batch: Union[np.ndarray, Sequence[JointAggregate]],
    params: VAEParams,
    noise_sigma: float,
    generator: np.random.Generator,
) -> Tuple[ElboReport, List[np.ndarray]]:
    """Negative ELBO averaged over the batch and its gradient for every array in
    ``params.arrays()`` (encoder blocks first)."""
    y = _as_batch(batch)
    if y.shape[0] == 0:
        raise DimensionMismatch("Empty batch.")
    if y.shape[1] != params.encoder_spec.n_in:
        raise DimensionMismatch(f"Batch rows have length {y.shape[1]}, expected {params.encoder_spec.n_in}.")

    B, K = y.shape
    d = params.latent_dim
    activation = params.encoder_spec.activation
    s2 = noise_sigma ** 2

    x = (y - params.shift) / params.scale
    mu, log_sigma, enc_cache = _encoder_forward(params.encoder, x, params.encoder_spec)
    sigma = np.exp(log_sigma)
    eps = generator.standard_normal(mu.shape)
    z = mu + sigma * eps

    dec_out, dec_cache = forward(params.decoder, z, activation)
    y_hat = params.shift + params.scale * dec_out
    resid = y_hat - y

    recon = np.sum(resid ** 2, axis=1) / (2.0 * s2) + K * (math.log(noise_sigma) + 0.5 * LOG_2PI)
    kl = 0.5 * np.sum(sigma ** 2 + mu ** 2 - 1.0 - 2.0 * log_sigma, axis=1)
    report = ElboReport(
        reconstruction_term=float(recon.mean()),
        kl_term=float(kl.mean()),
        total=float(recon.mean() + kl.mean()),
    )

    grad_dec_out = params.scale * resid / (s2 * B)
    dec_grads, grad_z = backward(params.decoder, dec_cache, grad_dec_out, activation)

    grad_mu = grad_z + mu / B
    grad_log_sigma = grad_z * eps * sigma + (sigma ** 2 - 1.0) / B
    enc_grads, _ = backward(params.encoder, enc_cache, np.hstack([grad_mu, grad_log_sigma]), activation)

    return report, enc_grads + dec_grads


def elbo_loss(
    batch: Union[np.ndarray, Sequence[JointAggregate]], params: VAEParams, noise_sigma: float, seed
) -> ElboReport:
    report, _ = elbo_and_grad(batch, params, noise_sigma, rng.as_generator(seed, rng.VAE, 1))
    return report


class Adam:
    """Per-parameter steps scaled by bias-corrected first and second moment estimates."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def default_noise_sigma(data: np.ndarray) -> float:
    return 0.01 * float(np.std(data))


def train(
    training_set: Union[np.ndarray, Sequence[JointAggregate]],
    spec: MLPSpec,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    noise_sigma: Optional[float],
    seed: int,
    K1: Optional[int] = None,
    provenance: Optional[Dict] = None,
    log_every: int = 10,
) -> DecoderWeights:
    data = _as_batch(training_set)
    if data.shape[0] == 0:
        raise DimensionMismatch("Training set is empty.")
    if K1 is None:
        if isinstance(training_set, np.ndarray):
            raise ValueError("K1 is required when training on a bare array.")
        K1 = training_set[0].K1
    K = data.shape[1]
    if spec.n_in != K:
        raise DimensionMismatch(f"Encoder input {spec.n_in} does not match data width {K}.")
    d = spec.n_out // 2
    if spec.n_out != 2 * d or not d < K:
        raise DimensionMismatch(f"Encoder output must be 2d with d < {K}, got {spec.n_out}.")
    checks.positive_int(epochs, "epochs")
    checks.positive_int(batch_size, "batch_size")

    shift = data.mean(axis=0)
    scale = data.std(axis=0)
    scale[scale == 0] = 1.0
    if noise_sigma is None:
        noise_sigma = default_noise_sigma(data)
    checks.positive_real(noise_sigma, "noise_sigma")

    params = init_vae(spec, seed, shift=shift, scale=scale)
    arrays = params.arrays()
    n_enc = len(params.encoder)
    optimizer = Adam(learning_rate)
    shuffler = rng.stream(seed, rng.VAE, 2)
    noise = rng.stream(seed, rng.VAE, 3)

    count = data.shape[0]
    loss_trace: List[float] = []
    logger.info(
        "Training VAE %s on %d draws: d=%d, %d epochs, batch %d, noise_sigma %.4g",
        spec.layer_sizes,
        count,
        d,
        epochs,
        batch_size,
        noise_sigma,
    )
    for epoch in range(epochs):
        order = shuffler.permutation(count)
        total, seen = 0.0, 0
        for batch_index, start in enumerate(range(0, count, batch_size)):
            rows = order[start : start + batch_size]
            report, grads = elbo_and_grad(data[rows], params, noise_sigma, noise)
            if not np.isfinite(report.total) or any(not np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(
                    f"Loss became non-finite at epoch {epoch}, batch {batch_index}.",
                    epoch=epoch,
                    batch=batch_index,
                )
            optimizer.step(arrays, grads)
            total += report.total * len(rows)
            seen += len(rows)
        loss_trace.append(total / seen)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d/%d: loss %.6g", epoch + 1, epochs, loss_trace[-1])

    params.encoder, params.decoder = arrays[:n_enc], arrays[n_enc:]
    info = dict(provenance or {})
    info.update(
        {
            "seed": int(seed),
            "epochs": int(epochs),
            "batch_size": int(batch_size),
            "learning_rate": float(learning_rate),
            "noise_sigma": float(noise_sigma),
            "final_loss": float(loss_trace[-1]),
            "training_size": int(count),
        }
    )
    return DecoderWeights(
        spec=params.decoder_spec,
        params=tuple(np.array(p) for p in params.decoder),
        latent_dim=d,
        K1=int(K1),
        K2=int(K - K1),
        shift=shift,
        scale=scale,
        provenance=info,
        loss_trace=tuple(loss_trace),
    )


def sample_prior(weights: DecoderWeights, seed) -> np.ndarray:
    generator = rng.as_generator(seed, rng.PRIOR)
    return decode(generator.standard_normal(weights.latent_dim), weights)


def sample_prior_batch(weights: DecoderWeights, count: int, seed) -> np.ndarray:
    generator = rng.as_generator(seed, rng.PRIOR)
    return decode(generator.standard_normal((count, weights.latent_dim)), weights)
