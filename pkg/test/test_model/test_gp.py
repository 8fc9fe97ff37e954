import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..")))

from gpmap_mcp.model.gp import (
    AugmentedDataset,
    GPFactor,
    Kernel,
    Measurement,
    kernel_eval,
    posterior_at,
    posterior_batch,
    posterior_joint,
)


def _random_data(rng, n, dim=2, box=3.0, noise=0.05):
    data = AugmentedDataset()
    for _ in range(n):
        x = rng.uniform(-box, box, size=dim)
        data = data.with_raw(Measurement(x, rng.normal(), noise))
    return data


def test_kernel_rejects_non_positive_hyperparameters():
    with pytest.raises(ValueError):
        Kernel(0.0, 1.0)
    with pytest.raises(ValueError):
        Kernel(1.0, -0.5)
    with pytest.raises(ValueError):
        Kernel(float("inf"), 1.0)


def test_kernel_eval_values():
    assert kernel_eval(Kernel(1.0, 1.0), (0.3, -0.2), (0.3, -0.2)) == 1.0
    assert kernel_eval(Kernel(2.0, 1.0), (0.0, 0.0), (1e3, 0.0)) == 0.0
    assert kernel_eval(Kernel(0.90, 0.85), (0.0, 0.0), (0.85, 0.0)) == pytest.approx(0.90 * math.exp(-0.5), rel=1e-14)


def test_kernel_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    k = Kernel(1.3, 0.7)
    for _ in range(50):
        x, y = rng.normal(size=2), rng.normal(size=2)
        kxy = kernel_eval(k, x, y)
        assert kxy == kernel_eval(k, y, x)
        assert 0.0 <= kxy <= k.signal_scale
        assert kernel_eval(k, x, x) == k.signal_scale


def test_kernel_matrix_matches_scalar_eval():
    rng = np.random.default_rng(1)
    k = Kernel(0.8, 1.1)
    xa, xb = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    M = k.matrix(xa, xb)
    assert M.shape == (4, 3)
    for a in range(4):
        for b in range(3):
            assert M[a, b] == pytest.approx(kernel_eval(k, xa[a], xb[b]), rel=1e-14)


def test_measurement_requires_positive_noise():
    with pytest.raises(ValueError):
        Measurement((0.0, 0.0), 1.0, 0.0)


def test_augmented_dataset_orders_raw_before_fictitious():
    raw = Measurement((0.0, 0.0), 1.0, 0.01)
    fict = Measurement((1.0, 1.0), 2.0, 0.5)
    data = AugmentedDataset().with_fictitious(fict).with_raw(raw)
    assert data.rows == (raw, fict)
    np.testing.assert_array_equal(data.noise, [0.01, 0.5])
    assert data.raw_only().rows == (raw,)
    assert len(data) == 2


def test_empty_dataset_returns_prior():
    k = Kernel(1.7, 0.9)
    post = posterior_at(k, AugmentedDataset(), (2.0, -1.0))
    assert post.mean == 0.0
    assert post.variance == 1.7


def test_single_measurement_interpolates_in_the_noise_free_limit():
    k = Kernel(1.0, 1.0)
    data = AugmentedDataset().with_raw(Measurement((0.5, 0.5), 0.7, 1e-10))
    post = posterior_at(k, data, (0.5, 0.5))
    assert post.mean == pytest.approx(0.7, abs=1e-8)
    assert post.variance == pytest.approx(0.0, abs=1e-8)


def test_posterior_matches_explicit_inverse():
    rng = np.random.default_rng(2)
    k = Kernel(1.2, 0.6)
    X = rng.uniform(-2, 2, size=(3, 1))
    Y = rng.normal(size=3)
    noise = np.array([0.01, 0.04, 0.02])
    data = AugmentedDataset([Measurement(x, y, r) for x, y, r in zip(X, Y, noise)])
    xs = np.array([0.37])

    K = np.array([[kernel_eval(k, a, b) for b in X] for a in X])
    kx = np.array([kernel_eval(k, a, xs) for a in X])
    inv = np.linalg.inv(K + np.diag(noise))
    post = posterior_at(k, data, xs)
    assert post.mean == pytest.approx(kx @ inv @ Y, abs=1e-8)
    assert post.variance == pytest.approx(1.2 - kx @ inv @ kx, abs=1e-8)


def test_posterior_batch_matches_pointwise_on_grid():
    rng = np.random.default_rng(3)
    k = Kernel(0.9, 0.85)
    data = _random_data(rng, 20, box=6.0, noise=0.07 ** 2)
    g = np.linspace(-6.0, 6.0, 41)
    grid = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    batch = posterior_batch(k, data, grid)
    assert len(batch) == len(grid)
    for idx in range(0, len(grid), 37):
        single = posterior_at(k, data, grid[idx])
        assert batch[idx].mean == pytest.approx(single.mean, abs=1e-10)
        assert batch[idx].variance == pytest.approx(single.variance, abs=1e-10)


def test_posterior_batch_singleton_and_empty():
    rng = np.random.default_rng(4)
    k = Kernel(1.0, 1.0)
    data = _random_data(rng, 5)
    x = (0.2, -0.4)
    [only] = posterior_batch(k, data, [x])
    assert only == posterior_at(k, data, x)
    assert posterior_batch(k, data, np.zeros((0, 2))) == []


@pytest.mark.parametrize("seed", range(5))
def test_variance_bounded_by_prior_and_monotone_in_data(seed):
    rng = np.random.default_rng(seed)
    k = Kernel(rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5))
    data = _random_data(rng, 8)
    xs = rng.uniform(-3, 3, size=(40, 2))
    _, before = GPFactor.build(k, data).mean_var(xs)
    assert np.all(before >= 0.0)
    assert np.all(before <= k.signal_scale + 1e-9)
    more = data.with_raw(Measurement(rng.uniform(-3, 3, size=2), rng.normal(), 0.05))
    _, after = GPFactor.build(k, more).mean_var(xs)
    assert np.all(after <= before + 1e-9)


def test_row_permutation_leaves_posterior_unchanged():
    rng = np.random.default_rng(5)
    k = Kernel(1.0, 0.8)
    rows = [Measurement(rng.uniform(-2, 2, size=2), rng.normal(), rng.uniform(0.01, 0.1)) for _ in range(7)]
    perm = rng.permutation(len(rows))
    a = posterior_at(k, AugmentedDataset(rows), (0.1, 0.2))
    b = posterior_at(k, AugmentedDataset([rows[p] for p in perm]), (0.1, 0.2))
    assert a.mean == pytest.approx(b.mean, abs=1e-10)
    assert a.variance == pytest.approx(b.variance, abs=1e-10)


def test_fictitious_and_raw_blocks_are_interchangeable():
    rng = np.random.default_rng(6)
    k = Kernel(1.1, 0.9)
    base = _random_data(rng, 4)
    m = Measurement((0.3, 0.3), 0.8, 0.02)
    as_raw = posterior_at(k, base.with_raw(m), (0.0, 0.5))
    as_fict = posterior_at(k, base.with_fictitious(m), (0.0, 0.5))
    assert as_raw.mean == pytest.approx(as_fict.mean, abs=1e-12)
    assert as_raw.variance == pytest.approx(as_fict.variance, abs=1e-12)


def test_posterior_joint_diagonal_matches_marginals():
    rng = np.random.default_rng(7)
    k = Kernel(0.9, 1.0)
    data = _random_data(rng, 6)
    xs = rng.uniform(-2, 2, size=(5, 2))
    mean, cov = posterior_joint(k, data, xs)
    marg = posterior_batch(k, data, xs)
    np.testing.assert_allclose(mean, [p.mean for p in marg], atol=1e-12)
    np.testing.assert_allclose(np.diag(cov), [p.variance for p in marg], atol=1e-12)
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
