"""Seeded random streams.

Every stochastic stage asks for its own generator with ``stream(seed, KEY,
index...)``. Streams are Philox (counter-based) generators keyed by a
``SeedSequence`` over the root seed and the stage keys, so draw ``i`` of a
stage is the same no matter which worker produced it or in what order.
"""
import numpy as np

TRAINING = 1
TRUTH = 2
COUNTS = 3
VAE = 4
NUTS = 5
PRIOR = 6
HYPER = 7
PARTITION = 8
MVN = 9


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("A seed is required; aggvae never seeds from the clock.")

    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(seed, *keys: int) -> np.random.Generator:
    """Pass generators through untouched; turn integer seeds into a keyed stream."""
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(seed, *keys)
