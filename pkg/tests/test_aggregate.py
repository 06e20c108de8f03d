import numpy as np
import pytest

from aggvae import aggregate, geometry, priors, synthdata
from aggvae.errors import DimensionMismatch, GridError


def test_constant_field_counts_points(grid_setup):
    grid, M_old, M_new = grid_setup
    agg = aggregate.aggregate(np.ones(grid.n), M_old)

    np.testing.assert_array_equal(agg.values, M_old.entries.sum(axis=1))
    assert agg.cell_area == grid.cell_area
    # a full tiling integrates 1 to the extent area
    assert agg.scaled().sum() == pytest.approx(1.0)
    assert aggregate.aggregate(np.ones(grid.n), M_new).scaled().sum() == pytest.approx(1.0)


def test_aggregate_matches_dense_product(grid_setup):
    grid, M_old, _ = grid_setup
    f = np.random.default_rng(2).normal(size=grid.n)
    np.testing.assert_allclose(aggregate.aggregate(f, M_old).values, M_old.dense() @ f)


def test_aggregate_length_mismatch(grid_setup):
    _, M_old, _ = grid_setup
    with pytest.raises(DimensionMismatch):
        aggregate.aggregate(np.ones(M_old.n + 1), M_old)


def test_joint_aggregate_layout(grid_setup):
    grid, M_old, M_new = grid_setup
    f = np.arange(grid.n, dtype=float)
    joint = aggregate.joint_aggregate(f, M_old, M_new)

    assert (joint.K1, joint.K2) == (4, 9)
    np.testing.assert_allclose(joint.old, M_old.dense() @ f)
    np.testing.assert_allclose(joint.new, M_new.dense() @ f)
    # both partitions cover the same points
    assert joint.old.sum() == pytest.approx(joint.new.sum())


def test_joint_aggregate_needs_one_grid(partitions):
    old, new = partitions
    M_old = geometry.membership_matrix(geometry.build_grid([old, new], 6), old)
    M_new = geometry.membership_matrix(geometry.build_grid([old, new], 9), new)
    with pytest.raises(GridError):
        aggregate.joint_aggregate(np.zeros(M_old.n), M_old, M_new)


def test_training_set_is_independent_of_thread_count(grid_setup):
    grid, M_old, M_new = grid_setup
    hp = priors.HyperPriorSpec()
    serial = aggregate.generate_training_set(grid, M_old, M_new, hp, count=12, seed=9, threads=1)
    pooled = aggregate.generate_training_set(grid, M_old, M_new, hp, count=12, seed=9, threads=4)

    np.testing.assert_array_equal(aggregate.stack(serial), aggregate.stack(pooled))
    assert aggregate.stack(serial).shape == (12, 13)


def test_training_draws_differ_between_indices(grid_setup):
    grid, M_old, M_new = grid_setup
    values = aggregate.stack(
        aggregate.generate_training_set(grid, M_old, M_new, priors.HyperPriorSpec(), count=3, seed=1)
    )
    assert not np.array_equal(values[0], values[1])


def test_stack_and_unstack(grid_setup):
    grid, M_old, M_new = grid_setup
    values = np.random.default_rng(0).normal(size=(5, 13))
    draws = aggregate.unstack(values, 4, 9)
    assert len(draws) == 5
    np.testing.assert_array_equal(aggregate.stack(draws), values)
    with pytest.raises(DimensionMismatch):
        aggregate.stack([])


def tiny_setup(resolution=4):
    old, new = synthdata.make_partitions(1, 2, 2, 1)
    grid = geometry.build_grid([old, new], resolution)
    return grid, geometry.membership_matrix(grid, old), geometry.membership_matrix(grid, new)


def test_aggregate_is_linear(grid_setup):
    grid, M_old, _ = grid_setup
    generator = np.random.default_rng(5)
    f, g = generator.normal(size=(2, grid.n))
    combined = aggregate.aggregate(2.5 * f - 0.75 * g, M_old).values
    separate = 2.5 * aggregate.aggregate(f, M_old).values - 0.75 * aggregate.aggregate(g, M_old).values
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12)


def test_training_set_has_zero_mean():
    grid, M_old, M_new = tiny_setup(6)
    values = aggregate.stack(
        aggregate.generate_training_set(grid, M_old, M_new, priors.HyperPriorSpec(), count=10000, seed=21)
    )
    sd = values.std(axis=0)
    assert np.all(np.abs(values.mean(axis=0)) <= 4 * sd / 100)


def test_fixed_kernel_pushes_covariance_forward():
    grid, M_old, M_new = tiny_setup()
    kernel = priors.KernelSpec(variance=1.0, lengthscale=0.3)
    values = aggregate.stack(
        aggregate.generate_training_set(
            grid, M_old, M_new, priors.HyperPriorSpec(), count=20000, seed=22, kernel=kernel
        )
    )
    M = np.vstack([M_old.dense(), M_new.dense()])
    expected = M @ priors.rbf_covariance(grid, kernel) @ M.T
    np.testing.assert_allclose(np.cov(values.T), expected, atol=0.05 * expected.diagonal().max())
