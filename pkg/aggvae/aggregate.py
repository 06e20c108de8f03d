"""Midpoint-rule aggregation of grid-level GP draws to polygons.

Aggregates are the raw within-polygon sums f_bar = M f. The cell area c is
carried next to the sums instead of being multiplied in; ``scaled()`` gives
c * f_bar when the integral itself is needed.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from . import checks, rng
from .errors import CholeskyError, DimensionMismatch, GridError
from .geometry import Grid, MembershipMatrix
from .priors import HyperPriorSpec, KernelSpec, MVNSample, rbf_covariance, sample_hyperparameters, sample_mvn_cov

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AggregateVector:
    values: np.ndarray
    cell_area: float
    polygon_set_name: str

    @property
    def K(self) -> int:
        return len(self.values)

    def scaled(self) -> np.ndarray:
        return self.cell_area * self.values


@dataclass(frozen=True)
class JointAggregate:
    values: np.ndarray
    K1: int
    K2: int

    def __post_init__(self) -> None:
        if len(self.values) != self.K1 + self.K2:
            raise DimensionMismatch(
                f"Joint aggregate of length {len(self.values)} does not match K1 + K2 = {self.K1 + self.K2}."
            )

    @property
    def old(self) -> np.ndarray:
        return self.values[: self.K1]

    @property
    def new(self) -> np.ndarray:
        return self.values[self.K1 :]


def _values(f: Union[MVNSample, np.ndarray]) -> np.ndarray:
    return np.asarray(f.values if isinstance(f, MVNSample) else f, dtype=float)


def aggregate(f: Union[MVNSample, np.ndarray], M: MembershipMatrix) -> AggregateVector:
    values = _values(f)
    if values.ndim != 1 or len(values) != M.n:
        raise DimensionMismatch(f"Field has {values.size} entries but the membership matrix has {M.n} columns.")

    owner = M.owner
    covered = np.flatnonzero(owner >= 0)
    sums = np.zeros(M.K)
    # unbuffered and in ascending grid index, same result as a sequential loop
    np.add.at(sums, owner[covered], values[covered])
    return AggregateVector(values=sums, cell_area=M.cell_area, polygon_set_name=M.polygon_set_name)


def joint_aggregate(
    f: Union[MVNSample, np.ndarray], M_old: MembershipMatrix, M_new: MembershipMatrix
) -> JointAggregate:
    if M_old.grid_id != M_new.grid_id:
        raise GridError(f"Grid mismatch: {M_old.grid_id!r} vs {M_new.grid_id!r}.")

    old = aggregate(f, M_old).values
    new = aggregate(f, M_new).values
    return JointAggregate(values=np.concatenate([old, new]), K1=M_old.K, K2=M_new.K)


def _draw_one(
    index: int, grid: Grid, M_old, M_new, hp: HyperPriorSpec, seed: int, cov: Optional[np.ndarray] = None
) -> JointAggregate:
    generator = rng.stream(seed, rng.TRAINING, index)
    if cov is None:
        cov = rbf_covariance(grid, sample_hyperparameters(hp, generator))
    try:
        f = sample_mvn_cov(cov, generator)
    except CholeskyError as exc:
        raise CholeskyError(f"Training draw {index}: {exc}", jitter=exc.jitter) from exc
    return joint_aggregate(f, M_old, M_new)


def generate_training_set(
    grid: Grid,
    M_old: MembershipMatrix,
    M_new: MembershipMatrix,
    hp: HyperPriorSpec,
    count: int,
    seed: int,
    threads: Optional[int] = None,
    kernel: Optional[KernelSpec] = None,
) -> List[JointAggregate]:
    """Independent joint aggregates, each with freshly drawn kernel hyperparameters
    unless a fixed ``kernel`` is given.

    Draw ``i`` uses its own stream keyed by ``(seed, i)``, so the result does
    not depend on ``threads``.
    """
    checks.positive_int(count, "count")
    if M_old.grid_id != grid.grid_id or M_new.grid_id != grid.grid_id:
        raise GridError("Membership matrices were not built on this grid.")

    logger.info("Drawing %d joint aggregates on a %d-point grid", count, grid.n)
    cov = None if kernel is None else rbf_covariance(grid, kernel)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        draws = list(
            executor.map(lambda i: _draw_one(i, grid, M_old, M_new, hp, seed, cov), range(count))
        )
    return draws


def stack(training_set: Sequence[JointAggregate]) -> np.ndarray:
    """Training set as a (count, K1 + K2) array."""
    if not training_set:
        raise DimensionMismatch("Empty training set.")
    return np.vstack([draw.values for draw in training_set])


def unstack(values: np.ndarray, K1: int, K2: int) -> List[JointAggregate]:
    return [JointAggregate(values=row.copy(), K1=K1, K2=K2) for row in np.atleast_2d(values)]
