#!/usr/bin/env python3
"""
Tests for the optimistic value-iteration agents.
"""
import math
import os
import sys

import numpy as np
import pytest

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from agent.errors import ConfigurationError, InvalidInputError
from agent.kernels import EigendecayProfile, KernelSpec
from agent.krvi import (
    AgentConfig,
    BetaMode,
    KrviAgent,
    OptimalAgent,
    RandomAgent,
    act,
    beta,
)
from envs.mdp import evaluate_policy, solve_optimal, synth_mdp

SPEC = KernelSpec.matern(0.5, 0.5, 2)


@pytest.fixture
def mdp():
    return synth_mdp(SPEC, 1, 1, 8, 4, 3, 3, seed=2)


class FixedRows:
    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)

    def row(self, h, s):
        return self.rows


def test_fixed_beta_arithmetic():
    assert beta(AgentConfig(c_beta=1.0, delta=1.0 / math.e), 1, 1) == pytest.approx(1.0)
    expected = 6.0 * math.sqrt(math.log(30000.0))
    assert beta(AgentConfig(c_beta=2.0, delta=0.1), 3, 1000) == pytest.approx(expected)
    assert expected == pytest.approx(19.27, abs=0.01)


def test_fixed_beta_is_monotone():
    config = AgentConfig()
    values_t = [beta(config, 3, t) for t in (1, 10, 100, 1000)]
    values_h = [beta(config, h, 100) for h in (1, 2, 5)]
    assert values_t == sorted(values_t)
    assert values_h == sorted(values_h)


def test_theory_beta_uses_the_fixed_point():
    profile = EigendecayProfile(p=4.0, alpha=1.0)
    config = AgentConfig(beta_mode="theory_fixed_point")
    assert config.beta_mode is BetaMode.THEORY_FIXED_POINT
    value = beta(config, 2, 50, profile)
    assert value >= 3.0
    with pytest.raises(InvalidInputError):
        beta(config, 2, 50)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        AgentConfig(lam=0.0)
    with pytest.raises(InvalidInputError):
        AgentConfig(delta=1.0)


def test_first_plan_is_the_clamped_prior(mdp):
    agent = KrviAgent(SPEC, AgentConfig(), mdp.horizon, 100)
    qfun = agent.plan_episode(mdp)
    for h in range(1, mdp.horizon + 1):
        np.testing.assert_allclose(qfun.table(h), min(agent.beta_value, mdp.horizon - h + 1))


def test_act_breaks_ties_toward_the_lowest_index(mdp):
    assert act(FixedRows([0.2, 0.9, 0.9]), mdp, 1, 0) == 1
    assert act(FixedRows([5.2, 5.9, 5.9]), mdp, 1, 0) == 1
    assert act(FixedRows([0.4]), mdp, 1, 0) == 0


def test_single_step_episode():
    mdp = synth_mdp(SPEC, 1, 1, 4, 3, 1, 2, seed=0)
    agent = KrviAgent(SPEC, AgentConfig(), 1, 1)
    result = agent.run_episode(mdp, np.random.default_rng(0))
    assert len(result.trajectory) == 1
    assert result.trajectory[0].action == 0
    assert result.realized_return == mdp.rewards[0, result.initial_state, 0]


def test_episodes_record_one_observation_per_step(mdp):
    agent = KrviAgent(SPEC, AgentConfig(), mdp.horizon, 30)
    rng = np.random.default_rng(1)
    for t in range(1, 31):
        result = agent.run_episode(mdp, rng)
        assert result.t == t
        for step in result.trajectory:
            assert step.action == int(np.argmax(step.q_row))
            assert result.policy[step.h - 1, step.state] == step.action
        assert all(tree.max_capacity_ratio() <= 1.0 for tree in agent.trees)
    assert [tree.num_observations for tree in agent.trees] == [30] * mdp.horizon
    assert len(result.cover_stats) == mdp.horizon


def test_optimistic_values_respect_the_clamp(mdp):
    agent = KrviAgent(SPEC, AgentConfig(c_beta=0.3), mdp.horizon, 40)
    rng = np.random.default_rng(2)
    for _ in range(40):
        agent.run_episode(mdp, rng)
    qfun = agent.plan_episode(mdp)
    for h in range(1, mdp.horizon + 1):
        assert qfun.table(h).max() <= mdp.horizon - h + 1
    assert qfun.value(mdp.horizon + 1, 0) == 0.0


def test_kovi_mode_keeps_one_global_model(mdp):
    agent = KrviAgent(SPEC, AgentConfig(partition_enabled=False), mdp.horizon, 25)
    assert agent.name == "kovi"
    rng = np.random.default_rng(3)
    for _ in range(25):
        agent.run_episode(mdp, rng)
    assert all(tree.leaf_count == 1 for tree in agent.trees)


def test_squared_exponential_needs_an_explicit_alpha(mdp):
    se = KernelSpec.squared_exponential(0.3, 2)
    with pytest.raises(ConfigurationError) as excinfo:
        KrviAgent(se, AgentConfig(), mdp.horizon, 10)
    assert excinfo.value.field_path == "agent.alpha"
    assert KrviAgent(se, AgentConfig(alpha_override=1.0), mdp.horizon, 10).alpha == 1.0
    assert KrviAgent(se, AgentConfig(partition_enabled=False), mdp.horizon, 10).name == "kovi"


def test_horizon_mismatch_is_rejected(mdp):
    agent = KrviAgent(SPEC, AgentConfig(), 2, 10)
    with pytest.raises(InvalidInputError):
        agent.plan_episode(mdp)


def test_baseline_agents(mdp):
    rng = np.random.default_rng(4)
    optimal = OptimalAgent(mdp.horizon)
    tables = solve_optimal(mdp)
    for _ in range(3):
        result = optimal.run_episode(mdp, rng)
        value = evaluate_policy(mdp, result.policy)[0, result.initial_state]
        assert value == pytest.approx(tables.v_star[0, result.initial_state], abs=1e-12)

    random_agent = RandomAgent(mdp.horizon)
    first = random_agent.run_episode(mdp, rng).policy
    second = random_agent.run_episode(mdp, rng).policy
    assert first.shape == (mdp.horizon, mdp.num_states)
    assert not np.array_equal(first, second)
