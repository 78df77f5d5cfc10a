#!/usr/bin/env python3
"""
Tests for the synthetic MDP generator and the exact dynamic-programming oracle.
"""
import itertools
import os
import sys

import numpy as np
import pytest

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from agent.errors import InvalidInputError
from agent.kernels import KernelSpec
from envs.mdp import (
    EpisodicMdp,
    InitialStateMode,
    dump_mdp,
    embed,
    evaluate_policy,
    greedy_policy,
    load_mdp,
    monte_carlo_value,
    rkhs_mixture,
    solve_optimal,
    step,
    synth_mdp,
)

SPEC = KernelSpec.matern(0.5, 0.5, 2)


@pytest.fixture
def mdp():
    return synth_mdp(SPEC, 1, 1, 10, 3, 3, 4, seed=7)


def test_generated_tables_are_valid(mdp):
    assert mdp.rewards.shape == (3, 10, 3)
    assert mdp.transitions.shape == (3, 10, 3, 10)
    np.testing.assert_allclose(mdp.transitions.sum(axis=3), 1.0, atol=1e-12)
    assert mdp.rewards.min() >= 0.0 and mdp.rewards.max() <= 1.0
    for mixture in mdp.reward_mixtures:
        assert mixture.quadratic_form.max() <= 1.0 + 1e-9
    for mixture in mdp.transition_mixtures:
        assert mixture.quadratic_form.max() <= 1.0 + 1e-9


def test_generation_is_seeded():
    a = synth_mdp(SPEC, 1, 1, 6, 2, 2, 3, seed=1)
    b = synth_mdp(SPEC, 1, 1, 6, 2, 2, 3, seed=1)
    c = synth_mdp(SPEC, 1, 1, 6, 2, 2, 3, seed=2)
    assert np.array_equal(a.rewards, b.rewards) and np.array_equal(a.transitions, b.transitions)
    assert not np.array_equal(a.rewards, c.rewards)


def test_single_center_peak_reward():
    center = np.array([[0.25, 0.5]])
    mixture = rkhs_mixture(SPEC, center, np.array([1.0]), unit_norm=True)
    assert mixture(center)[0] == pytest.approx(1.0)


def test_embedding(mdp):
    grid = synth_mdp(SPEC, 1, 1, 5, 3, 1, 2, seed=0)
    np.testing.assert_allclose(embed(grid, 1, 1), [0.25, 0.5])
    points = np.array([embed(mdp, s, a) for s in range(mdp.num_states) for a in range(mdp.num_actions)])
    assert len(np.unique(points, axis=0)) == len(points)
    assert points.min() >= 0.0 and points.max() <= 1.0
    np.testing.assert_array_equal(points, mdp.joint_points())


def test_step_reward_and_one_hot_transitions():
    transitions = np.zeros((1, 2, 2, 2))
    transitions[0, :, :, 1] = 1.0
    rewards = np.array([[[0.1, 0.2], [0.3, 0.4]]])
    deterministic = EpisodicMdp(states=np.array([[0.0], [1.0]]), actions=np.array([[0.0], [1.0]]),
                                rewards=rewards, transitions=transitions)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert step(deterministic, 1, 0, 1, rng) == (0.2, 1)


def test_step_frequencies_follow_the_kernel(mdp):
    rng = np.random.default_rng(1)
    draws = np.array([step(mdp, 2, 4, 1, rng)[1] for _ in range(20_000)])
    p = mdp.transitions[1, 4, 1]
    freq = np.bincount(draws, minlength=mdp.num_states) / len(draws)
    band = 3.0 * np.sqrt(p * (1 - p) / len(draws)) + 1e-3
    assert np.all(np.abs(freq - p) <= band)


def test_step_validates_indices(mdp):
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidInputError):
        step(mdp, 0, 0, 0, rng)
    with pytest.raises(InvalidInputError):
        step(mdp, 1, 0, 3, rng)


def test_one_step_optimal_value():
    mdp = synth_mdp(SPEC, 1, 1, 4, 3, 1, 2, seed=3)
    np.testing.assert_allclose(solve_optimal(mdp).v_star[0], mdp.rewards[0].max(axis=1))


def test_zero_reward_mdp_has_zero_value(mdp):
    zero = EpisodicMdp(states=mdp.states, actions=mdp.actions, rewards=np.zeros_like(mdp.rewards),
                       transitions=mdp.transitions)
    assert np.all(solve_optimal(zero).v_star == 0.0)


def test_backward_induction_matches_policy_enumeration():
    small = synth_mdp(SPEC, 1, 1, 3, 2, 3, 3, seed=5)
    H, S, A = small.rewards.shape
    best = np.full(S, -np.inf)
    for flat in itertools.product(range(A), repeat=H * S):
        best = np.maximum(best, evaluate_policy(small, np.array(flat).reshape(H, S))[0])
    np.testing.assert_allclose(solve_optimal(small).v_star[0], best, atol=1e-12)


def test_greedy_policy_attains_the_optimum(mdp):
    tables = solve_optimal(mdp)
    values = evaluate_policy(mdp, greedy_policy(tables.q_star))
    np.testing.assert_allclose(values, tables.v_star, atol=1e-12)
    assert tables.v(1, 0) == tables.v_star[0, 0]
    assert values.shape == (mdp.horizon + 1, mdp.num_states)
    assert np.all(values[-1] == 0.0)


def test_one_step_policy_value():
    mdp = synth_mdp(SPEC, 1, 1, 4, 3, 1, 2, seed=3)
    policy = np.array([[2, 0, 1, 1]])
    np.testing.assert_allclose(evaluate_policy(mdp, policy)[0],
                               mdp.rewards[0, np.arange(4), policy[0]])


def test_monte_carlo_agrees_with_exact_evaluation(mdp):
    rng = np.random.default_rng(2)
    policy = rng.integers(mdp.num_actions, size=(mdp.horizon, mdp.num_states))
    exact = evaluate_policy(mdp, policy)[0, 3]
    mean, stderr = monte_carlo_value(mdp, policy, 3, 100_000, rng)
    assert abs(mean - exact) <= 3.0 * stderr


def test_initial_state_modes(mdp):
    assert [mdp.initial_state(t) for t in (1, 2, 11)] == [0, 1, 0]
    fixed = synth_mdp(SPEC, 1, 1, 10, 3, 3, 4, seed=7, initial_mode=InitialStateMode.FIXED,
                      fixed_state=4)
    assert {fixed.initial_state(t) for t in range(1, 20)} == {4}
    adversarial = synth_mdp(SPEC, 1, 1, 10, 3, 3, 4, seed=7,
                            initial_mode=InitialStateMode.ADVERSARIAL)
    sequence = [adversarial.initial_state(t) for t in range(1, 30)]
    assert sequence == [adversarial.initial_state(t) for t in range(1, 30)]


def test_invalid_tables_are_rejected(mdp):
    bad = mdp.transitions.copy()
    bad[0, 0, 0, 0] += 0.1
    with pytest.raises(InvalidInputError):
        EpisodicMdp(states=mdp.states, actions=mdp.actions, rewards=mdp.rewards, transitions=bad)
    with pytest.raises(InvalidInputError):
        synth_mdp(SPEC, 2, 1, 4, 2, 1, 1, seed=0)


def test_dump_and_load_preserve_the_tables(tmp_path, mdp):
    path = dump_mdp(mdp, tmp_path / "mdp.csv")
    loaded = load_mdp(path)
    assert np.array_equal(loaded.rewards, mdp.rewards)
    assert np.array_equal(loaded.transitions, mdp.transitions)
    assert np.array_equal(loaded.states, mdp.states)
    assert loaded.initial_mode is mdp.initial_mode and loaded.seed == mdp.seed
