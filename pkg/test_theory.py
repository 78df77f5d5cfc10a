#!/usr/bin/env python3
"""
Tests for the analytic bound calculators.
"""
import math
import os
import sys

import numpy as np
import pytest

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from agent.errors import DegenerateInputError, InvalidProfileError, NoFixedPointError
from agent.kernels import EigendecayProfile, KernelSpec
from agent.partition import CoverTree
from agent.regression import KernelRidgeRegressor, rkhs_norm_bound
from envs.mdp import rkhs_mixture
from theory.bounds import (
    BoundConstants,
    BoundParams,
    beta_rhs,
    bound_table,
    cover_size_bound,
    info_gain_bound,
    info_gain_bound_curve,
    matern_regret_exponent,
    regret_bound,
    regret_exponent,
    rkhs_covering_bound,
    solve_beta,
    ucb_class_covering_bound,
)

QUADRATIC = EigendecayProfile(p=2.0, alpha=1.0)
QUARTIC = EigendecayProfile(p=4.0, alpha=1.0)


def test_info_gain_bound_is_finite_and_monotone():
    params = BoundParams(profile=QUADRATIC)
    assert 0.0 < info_gain_bound(params, 1) < math.inf
    curve = info_gain_bound_curve(params, 10_000)
    assert np.all(np.diff(curve) >= 0.0)
    assert info_gain_bound(params, 500) == curve[499]


def test_info_gain_bound_dominates_a_greedy_design():
    spec = KernelSpec.finite_spectrum(QUADRATIC, 64, 0, 1)
    bound = info_gain_bound_curve(BoundParams(profile=QUADRATIC), 300)
    candidates = np.linspace(0.0, 1.0, 65).reshape(-1, 1)
    model = KernelRidgeRegressor(spec, 1.0)
    for t in range(300):
        _, stddev = model.predict_many(candidates)
        model.observe(candidates[int(np.argmax(stddev))], 0.0)
        assert model.information_gain() <= bound[t]


def test_rkhs_covering_arithmetic():
    params = BoundParams(profile=QUADRATIC)
    assert rkhs_covering_bound(params, 2.0, 0.5) == pytest.approx(16.0 * (1.0 + math.log(4.0)))
    assert rkhs_covering_bound(params, 2.0, 0.5) == pytest.approx(38.18, abs=0.01)
    # eps == R: log factor is one
    assert rkhs_covering_bound(params, 1.0, 1.0) == pytest.approx(1.0)
    values = [rkhs_covering_bound(params, 2.0, eps) for eps in (0.1, 0.5, 1.0, 2.0)]
    assert values == sorted(values, reverse=True)
    with pytest.raises(DegenerateInputError):
        rkhs_covering_bound(params, 1.0, 1.5)


def test_profile_below_one_is_rejected():
    params = BoundParams(profile=EigendecayProfile(p=2.0, alpha=1.0, eta=0.3))
    with pytest.raises(InvalidProfileError):
        info_gain_bound(params, 10)


def test_ucb_class_covering_parts():
    params = BoundParams(profile=QUARTIC)
    zero_b = ucb_class_covering_bound(params, 2.0, 0.0, 0.3)
    assert zero_b.parts["interval"] == 0.0 and zero_b.parts["uncertainty"] == 0.0
    assert zero_b.total == pytest.approx(rkhs_covering_bound(params, 2.0, 0.1))
    totals = [ucb_class_covering_bound(params, 2.0, b, 0.3).total for b in (0.0, 1.0, 5.0, 20.0)]
    assert totals == sorted(totals)
    cover = ucb_class_covering_bound(params, 2.0, 5.0, 0.3)
    assert cover.total == pytest.approx(sum(cover.parts.values()))


def test_solve_beta_is_a_fixed_point():
    params = BoundParams(profile=QUARTIC, horizon=2, num_episodes=100)
    value = solve_beta(params, 100, 100, 0.01)
    assert value >= params.horizon + 1
    assert value >= beta_rhs(params, value, 100, 100, 0.01) * (1.0 - 1e-8)
    later = [solve_beta(params, t, 100, 0.01) for t in (10, 50, 100)]
    assert later == sorted(later)


def test_solve_beta_reports_divergence():
    # huge constants keep the covering term growing faster than beta
    params = BoundParams(profile=EigendecayProfile(p=1.2, alpha=1.0), horizon=3, num_episodes=1000,
                         constants=BoundConstants(c4=1e6, c5=1e6))
    with pytest.raises(NoFixedPointError):
        solve_beta(params, 1000, 1, 1.0)


def test_regret_exponents():
    assert regret_exponent(2, 1.0) == pytest.approx(5.0 / 6.0)
    assert matern_regret_exponent(0.5, 1) == pytest.approx(0.75)
    rng = np.random.default_rng(0)
    for _ in range(20):
        nu, d = rng.uniform(0.1, 5.0), int(rng.integers(1, 10))
        assert abs(regret_exponent(d, 2 * nu) - matern_regret_exponent(nu, d)) <= 1e-12
        assert regret_exponent(d, 2 * nu) < 1.0


def test_regret_and_cover_size_bounds():
    profile = EigendecayProfile.for_matern(0.5, 2)
    params = BoundParams(profile=profile, horizon=3, num_episodes=1000, dimension=2, nu=0.5)
    bound = regret_bound(params)
    assert bound.exponent == pytest.approx(5.0 / 6.0)
    assert bound.matern_exponent == pytest.approx(2.5 / 3.0)
    assert bound.value > 0.0
    assert cover_size_bound(params) == pytest.approx(1000 ** (2.0 / 3.0))


def test_bound_table_columns():
    params = BoundParams(profile=QUARTIC, horizon=2, num_episodes=10, dimension=1)
    table = bound_table(params, [10, 100, 1000])
    assert list(table.columns) == ["t", "info_gain_bound", "beta", "regret_bound", "cover_size_bound"]
    assert table["t"].tolist() == [10, 100, 1000]
    assert table["info_gain_bound"].is_monotonic_increasing


def test_leaf_information_gain_stays_under_the_local_bound():
    spec = KernelSpec.finite_spectrum(QUARTIC, 16, 0, 1)
    tree = CoverTree(1, 1.0, spec, lam=1.0)
    rng = np.random.default_rng(21)
    for point in rng.uniform(size=(300, 1)):
        tree.record(point, 0.0)
    params = BoundParams(profile=QUARTIC, lam=1.0, c1=1.0)
    checked = 0
    for leaf in tree.leaves():
        if not leaf.obs_count:
            continue
        bound = info_gain_bound(params, leaf.obs_count, rho=leaf.side)
        assert leaf.regressor.information_gain() <= bound + 1e-12
        checked += 1
    assert checked > 10


def test_desk_scale_confidence_soundness():
    # |f - mu| <= beta_1 b on a query grid, beta_1 = R + sigma sqrt(2 (Gamma + 1 + log 1/delta))
    spec = KernelSpec.matern(1.5, 0.3, 1)
    rng = np.random.default_rng(22)
    target = rkhs_mixture(spec, rng.uniform(size=(4, 1)), rng.normal(size=4), unit_norm=True)
    queries = np.linspace(0.0, 1.0, 50).reshape(-1, 1)
    truth = target(queries)
    noise, delta, trials = 0.1, 0.1, 500
    held = 0
    for _ in range(trials):
        design = rng.uniform(size=(30, 1))
        observed = target(design) + rng.uniform(-noise, noise, size=30)
        model = KernelRidgeRegressor.from_observations(spec, 1.0, design, observed)
        beta_1 = rkhs_norm_bound(1.0, noise, 1.0, model.information_gain(), delta)
        mean, stddev = model.predict_many(queries)
        held += bool(np.all(np.abs(truth - mean) <= beta_1 * stddev))
    assert held / trials >= 1.0 - delta
