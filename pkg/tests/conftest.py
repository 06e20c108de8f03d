import numpy as np
import pytest

from aggvae import geometry, synthdata, vae
from aggvae._classes import Activation
from aggvae.inference import PrevalenceData

FD_STEP = 1e-6


def central_difference(f, x, h=FD_STEP):
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        grad.flat[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


@pytest.fixture
def numeric_grad():
    return central_difference


@pytest.fixture
def rel_err():
    return relative_error


@pytest.fixture
def unit_square():
    return np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])


@pytest.fixture
def partitions():
    """2x2 old vs 3x3 new tiling of the unit square."""
    return synthdata.make_partitions(2, 2, 3, 3)


@pytest.fixture
def grid_setup(partitions):
    old, new = partitions
    grid = geometry.build_grid([old, new], 12)
    return grid, geometry.membership_matrix(grid, old), geometry.membership_matrix(grid, new)


def random_decoder(K1, K2, latent_dim=2, hidden=(6,), seed=0, activation=Activation.TANH):
    """Untrained decoder with random weights, for gradient checks."""
    spec = vae.MLPSpec((latent_dim, *hidden, K1 + K2), activation)
    generator = np.random.default_rng(seed)
    params = [generator.normal(0.0, 0.7, size=shape) for shape in spec.shapes()]
    return vae.DecoderWeights(
        spec=spec,
        params=tuple(params),
        latent_dim=latent_dim,
        K1=K1,
        K2=K2,
        shift=generator.normal(0.0, 0.1, K1 + K2),
        scale=np.full(K1 + K2, 0.5),
    )


@pytest.fixture
def decoder_factory():
    return random_decoder


def make_data(labels, n_tests, n_pos):
    return PrevalenceData(tuple(labels), np.asarray(n_tests), np.asarray(n_pos))


@pytest.fixture
def data_factory():
    return make_data
