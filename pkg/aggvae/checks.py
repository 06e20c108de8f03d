import numpy as np

from .errors import AggVAEError, DimensionMismatch, PrecisionSpecError


def positive_int(value, name: str, minimum: int = 1, error=AggVAEError) -> bool:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise error(f"{name} must be an integer >= {minimum}, got {value!r}.")

    return True


def positive_real(value, name: str, error=AggVAEError) -> bool:
    if not np.isfinite(value) or value <= 0:
        raise error(f"{name} must be positive and finite, got {value!r}.")

    return True


def finite_array(values: np.ndarray, name: str, error=AggVAEError) -> bool:
    if not np.all(np.isfinite(values)):
        raise error(f"{name} contains non-finite entries.")

    return True


def same_length(a, b, what: str) -> bool:
    if len(a) != len(b):
        raise DimensionMismatch(f"{what}: expected length {len(b)}, got {len(a)}.")

    return True


def adjacency(a: np.ndarray) -> bool:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PrecisionSpecError(f"Adjacency must be square, got shape {a.shape}.")

    if not np.array_equal(a, a.T):
        raise PrecisionSpecError("Adjacency matrix is not symmetric.")

    if np.any(np.diag(a) != 0):
        raise PrecisionSpecError("Adjacency matrix must have a zero diagonal.")

    if not np.all((a == 0) | (a == 1)):
        raise PrecisionSpecError("Adjacency entries must be 0 or 1.")

    return True
