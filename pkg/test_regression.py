#!/usr/bin/env python3
"""
Tests for the incremental kernel ridge regressor.
"""
import math
import os
import sys

import numpy as np
import pytest

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from agent.errors import InvalidInputError
from agent.kernels import EigendecayProfile, KernelSpec
from agent.regression import (
    KernelRidgeRegressor,
    dense_information_gain,
    dense_posterior,
    rkhs_norm_bound,
)


@pytest.fixture
def spec():
    return KernelSpec.matern(0.5, 0.5, 2)


def test_empty_regressor_returns_the_prior(spec):
    model = KernelRidgeRegressor(spec, 1.0)
    assert len(model) == 0
    assert model.log_det_accum == 0.0
    assert model.information_gain() == 0.0
    prediction = model.predict([0.4, 0.6])
    assert prediction.mean == 0.0
    assert prediction.stddev == pytest.approx(1.0)


def test_single_observation_by_hand(spec):
    model = KernelRidgeRegressor(spec, 1.0).observe([0.3, 0.3], 2.0)
    prediction = model.predict([0.3, 0.3])
    assert prediction.mean == pytest.approx(1.0)
    assert prediction.stddev == pytest.approx(math.sqrt(0.5))
    assert model.log_det_accum == pytest.approx(math.log(2.0))


def test_incremental_matches_dense_solve():
    rng = np.random.default_rng(11)
    for nu, d in [(0.5, 1), (1.5, 2), (2.5, 3), (0.8, 2)]:
        spec = KernelSpec.matern(nu, 0.6, d)
        points = rng.uniform(size=(60, d))
        targets = rng.normal(size=60)
        queries = rng.uniform(size=(20, d))
        model = KernelRidgeRegressor(spec, 0.8)
        for z, y in zip(points, targets):
            model.observe(z, y)
        mean, stddev = model.predict_many(queries)
        ref_mean, ref_std = dense_posterior(spec, 0.8, points, targets, queries)
        np.testing.assert_allclose(mean, ref_mean, atol=1e-8)
        np.testing.assert_allclose(stddev, ref_std, atol=1e-8)


def test_fit_matches_sequential_observation(spec):
    rng = np.random.default_rng(3)
    points = rng.uniform(size=(25, 2))
    targets = rng.normal(size=25)
    batch = KernelRidgeRegressor.from_observations(spec, 1.0, points, targets)
    sequential = KernelRidgeRegressor(spec, 1.0)
    for z, y in zip(points, targets):
        sequential.observe(z, y)
    queries = rng.uniform(size=(8, 2))
    for a, b in zip(batch.predict_many(queries), sequential.predict_many(queries)):
        np.testing.assert_allclose(a, b, atol=1e-9)
    assert batch.information_gain() == pytest.approx(sequential.information_gain(), abs=1e-8)


def test_refit_targets_keeps_points(spec):
    rng = np.random.default_rng(5)
    points = rng.uniform(size=(10, 2))
    model = KernelRidgeRegressor.from_observations(spec, 1.0, points, np.zeros(10))
    gain = model.information_gain()
    new_targets = rng.normal(size=10)
    model.refit_targets(new_targets)
    queries = rng.uniform(size=(4, 2))
    ref_mean, _ = dense_posterior(spec, 1.0, points, new_targets, queries)
    np.testing.assert_allclose(model.predict_many(queries)[0], ref_mean, atol=1e-9)
    assert model.information_gain() == gain
    with pytest.raises(InvalidInputError):
        model.refit_targets(np.zeros(3))


def test_interpolation_limit_with_small_ridge(spec):
    rng = np.random.default_rng(8)
    points = rng.uniform(size=(5, 2))
    targets = rng.uniform(size=5)
    model = KernelRidgeRegressor.from_observations(spec, 1e-3, points, targets)
    assert model.predict(points[0]).mean == pytest.approx(targets[0], abs=1e-4)


def test_uncertainty_shrinks_with_data(spec):
    rng = np.random.default_rng(2)
    queries = rng.uniform(size=(12, 2))
    model = KernelRidgeRegressor(spec, 1.0)
    previous = model.predict_many(queries)[1]
    for z in rng.uniform(size=(40, 2)):
        model.observe(z, 0.0)
        current = model.predict_many(queries)[1]
        assert np.all(current <= previous + 1e-10)
        previous = current


def test_information_gain_matches_log_det(spec):
    rng = np.random.default_rng(4)
    points = rng.uniform(size=(50, 2))
    model = KernelRidgeRegressor.from_observations(spec, 1.0, points, np.zeros(50))
    assert model.information_gain() == pytest.approx(dense_information_gain(spec, 1.0, points), abs=1e-8)


def test_orthogonal_design_information_gain():
    # far-apart points under a short lengthscale give an identity Gram matrix
    spec = KernelSpec.matern(0.5, 1e-4, 1)
    model = KernelRidgeRegressor.from_observations(spec, 1.0, [[0.0], [0.5], [1.0]], [0.0, 0.0, 0.0])
    assert model.information_gain() == pytest.approx(1.5 * math.log(2.0), abs=1e-9)


def test_norm_bound_arithmetic(spec):
    H = 3
    model = KernelRidgeRegressor(spec, 1.0)
    expected = H + 1 + (H / 2) * math.sqrt(2 * (1 + math.log(2)))
    assert model.predictor_norm_bound(H + 1, H / 2, 0.5) == pytest.approx(expected)
    assert rkhs_norm_bound(1.0, 1.0, 1.0, 0.0, 1 - 1e-12) == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-6)
    assert rkhs_norm_bound(1.0, 1.0, 1.0, 5.0, 0.1) > rkhs_norm_bound(1.0, 1.0, 1.0, 1.0, 0.1)
    with pytest.raises(InvalidInputError):
        rkhs_norm_bound(1.0, 1.0, 1.0, 0.0, 1.0)


def test_finite_spectrum_regressor_matches_dense():
    spec = KernelSpec.finite_spectrum(EigendecayProfile(p=3.0, alpha=1.0), 16, 2, 1)
    rng = np.random.default_rng(9)
    points = rng.uniform(size=(30, 1))
    targets = rng.normal(size=30)
    model = KernelRidgeRegressor.from_observations(spec, 0.5, points, targets)
    queries = np.linspace(0.0, 1.0, 9).reshape(-1, 1)
    for a, b in zip(model.predict_many(queries), dense_posterior(spec, 0.5, points, targets, queries)):
        np.testing.assert_allclose(a, b, atol=1e-7)


def test_repeated_grid_points_match_dense(spec):
    rng = np.random.default_rng(12)
    grid = rng.uniform(size=(6, 2))
    points = grid[rng.integers(6, size=90)]
    targets = rng.normal(size=90)
    model = KernelRidgeRegressor(spec, 0.1)
    for z, y in zip(points, targets):
        model.observe(z, y)
    queries = np.vstack([grid, rng.uniform(size=(5, 2))])
    mean, stddev = model.predict_many(queries)
    ref_mean, ref_std = dense_posterior(spec, 0.1, points, targets, queries)
    np.testing.assert_allclose(mean, ref_mean, atol=1e-8)
    np.testing.assert_allclose(stddev, ref_std, atol=1e-8)
    assert model.information_gain() == pytest.approx(dense_information_gain(spec, 0.1, points), abs=1e-8)


def test_repeated_point_posterior_by_hand(spec):
    # n copies of one point: mean n y / (n + lambda^2), stddev lambda / sqrt(n + lambda^2)
    model = KernelRidgeRegressor(spec, 0.5)
    for _ in range(4):
        model.observe([0.2, 0.7], 1.0)
    prediction = model.predict([0.2, 0.7])
    assert prediction.mean == pytest.approx(4.0 / 4.25, abs=1e-8)
    assert prediction.stddev == pytest.approx(0.5 / math.sqrt(4.25), abs=1e-8)


def test_invalid_ridge_parameter(spec):
    with pytest.raises(InvalidInputError):
        KernelRidgeRegressor(spec, 0.0)
