"""
Finite-grid episodic MDPs embedded in [0,1]^d, with exact dynamic-programming oracles.

Rewards and transition scores are kernel mixtures whose RKHS norm is at most
one before clipping/normalization. Steps ``h`` are 1-based in the public API.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from agent.errors import InvalidInputError
from agent.kernels import KernelSpec, cross_gram, gram

logger = logging.getLogger(__name__)

TRANSITION_FLOOR = 1e-6
ROW_SUM_TOL = 1e-12
TRANSITION_CONCENTRATION = 0.3


class InitialStateMode(Enum):
    """How the environment picks s_1 for episode t."""
    CYCLE = "cycle"
    FIXED = "fixed"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True, eq=False)
class RkhsMixture:
    """f(z) = sum_j w_j k(z, c_j); ``weights`` may hold one column per function."""
    spec: KernelSpec
    centers: np.ndarray
    weights: np.ndarray

    @property
    def quadratic_form(self) -> np.ndarray:
        """w^T K_cc w per column, the squared RKHS norm."""
        k_cc = gram(self.spec, self.centers)
        w = self.weights.reshape(self.centers.shape[0], -1)
        return np.einsum("jm,jk,km->m", w, k_cc, w)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return cross_gram(self.spec, points, self.centers) @ self.weights


def rkhs_mixture(spec: KernelSpec, centers: np.ndarray, weights: np.ndarray,
                 unit_norm: bool = False) -> RkhsMixture:
    """
    Build a kernel mixture rescaled into the RKHS unit ball.

    Args:
        spec: kernel whose RKHS the mixture lives in
        centers: (J, d) center points
        weights: (J,) or (J, m) raw weights
        unit_norm: scale every column to norm exactly one instead of only
            shrinking columns whose norm exceeds one

    Returns:
        RkhsMixture whose columns have quadratic form <= 1
    """
    centers = np.asarray(centers, dtype=float)
    weights = np.array(weights, dtype=float)
    mixture = RkhsMixture(spec, centers, weights)
    quad = mixture.quadratic_form
    scale = np.ones_like(quad)
    positive = quad > 0.0
    if unit_norm:
        scale[positive] = 1.0 / np.sqrt(quad[positive])
    else:
        large = quad > 1.0
        scale[large] = 1.0 / np.sqrt(quad[large])
    scaled = weights * scale if weights.ndim > 1 else weights * scale[0]
    return RkhsMixture(spec, centers, scaled)


@dataclass(frozen=True, eq=False)
class EpisodicMdp:
    """
    Episodic MDP over a finite state grid and a finite action list.

    ``rewards`` has shape (H, S, A) and ``transitions`` shape (H, S, A, S);
    row ``h - 1`` holds step h.
    """
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    transitions: np.ndarray
    initial_mode: InitialStateMode = InitialStateMode.CYCLE
    fixed_state: int = 0
    seed: int = 0
    reward_mixtures: Optional[List[RkhsMixture]] = field(default=None, compare=False, repr=False)
    transition_mixtures: Optional[List[RkhsMixture]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        H, S, A = self.rewards.shape
        if self.states.shape[0] != S or self.actions.shape[0] != A:
            raise InvalidInputError("state/action lists do not match the reward table")
        if self.transitions.shape != (H, S, A, S):
            raise InvalidInputError(
                f"transition table has shape {self.transitions.shape}, expected {(H, S, A, S)}")
        if self.rewards.min() < 0.0 or self.rewards.max() > 1.0:
            raise InvalidInputError("rewards must lie in [0, 1]")
        if self.transitions.min() < 0.0:
            raise InvalidInputError("transition probabilities must be non-negative")
        row_error = np.abs(self.transitions.sum(axis=3) - 1.0).max()
        if row_error > ROW_SUM_TOL:
            raise InvalidInputError(f"transition rows deviate from 1 by {row_error:.3e}")
        if not 0 <= self.fixed_state < S:
            raise InvalidInputError(f"fixed_state {self.fixed_state} out of range")
        for arr in (self.states, self.actions):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise InvalidInputError("state and action coordinates must lie in [0, 1]")

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_states(self) -> int:
        return self.rewards.shape[1]

    @property
    def num_actions(self) -> int:
        return self.rewards.shape[2]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.state_dim + self.action_dim

    def initial_state(self, t: int) -> int:
        """s_1 for episode t (1-based)."""
        if self.initial_mode is InitialStateMode.FIXED:
            return self.fixed_state
        if self.initial_mode is InitialStateMode.ADVERSARIAL:
            # oblivious: depends only on (seed, t), never on the learner
            return int(np.random.default_rng([self.seed, t]).integers(self.num_states))
        return (t - 1) % self.num_states

    def action_points(self, s: int) -> np.ndarray:
        """(A, d) embeddings of every action at state s."""
        self._check_state(s)
        state = np.broadcast_to(self.states[s], (self.num_actions, self.state_dim))
        return np.hstack([state, self.actions])

    def joint_points(self) -> np.ndarray:
        """(S * A, d) embeddings in state-major order; row s * A + a is (s, a)."""
        return np.hstack([np.repeat(self.states, self.num_actions, axis=0),
                          np.tile(self.actions, (self.num_states, 1))])

    def _check_state(self, s: int):
        if not 0 <= s < self.num_states:
            raise InvalidInputError(f"state index {s} out of range [0, {self.num_states})")

    def _check_step(self, h: int):
        if not 1 <= h <= self.horizon:
            raise InvalidInputError(f"step {h} out of range [1, {self.horizon}]")


@dataclass(frozen=True, eq=False)
class ValueTables:
    """v_star has H+1 rows (the last is zero); q_star has H."""
    v_star: np.ndarray
    q_star: np.ndarray

    def v(self, h: int, s: int) -> float:
        return float(self.v_star[h - 1, s])


def _state_grid(grid_per_dim: int, d_s: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, grid_per_dim)
    return np.array(list(itertools.product(axis, repeat=d_s)), dtype=float)


def synth_mdp(spec: KernelSpec, d_s: int, d_a: int, grid_per_dim: int, num_actions: int,
              H: int, num_centers: int, seed: int,
              initial_mode: InitialStateMode = InitialStateMode.CYCLE,
              fixed_state: int = 0, floor: float = TRANSITION_FLOOR) -> EpisodicMdp:
    """
    Generate a seeded MDP whose rewards and transition scores are RKHS mixtures.

    Rewards are clip(sum_j w_j k(z, c_j)) with w >= 0 scaled to unit norm.
    Transition scores for each next state are mixtures with norm <= 1; the
    probabilities are max(0, score) + floor, normalized over the grid.
    """
    if d_s < 1 or d_a < 1:
        raise InvalidInputError("d_s and d_a must be at least 1")
    if spec.dimension != d_s + d_a:
        raise InvalidInputError(
            f"kernel dimension {spec.dimension} must equal d_s + d_a = {d_s + d_a}")
    if grid_per_dim < 2:
        raise InvalidInputError(f"grid_per_dim must be >= 2, got {grid_per_dim}")
    if num_centers < 1 or num_actions < 1 or H < 1:
        raise InvalidInputError("num_centers, num_actions and H must be >= 1")
    if not floor > 0.0:
        raise InvalidInputError(f"floor must be positive, got {floor}")

    rng = np.random.default_rng(seed)
    states = _state_grid(grid_per_dim, d_s)
    if d_a == 1:
        actions = np.linspace(0.0, 1.0, num_actions).reshape(-1, 1)
    else:
        actions = rng.uniform(0.0, 1.0, size=(num_actions, d_a))
    S, A = states.shape[0], actions.shape[0]
    points = np.hstack([np.repeat(states, A, axis=0), np.tile(actions, (S, 1))])

    rewards = np.zeros((H, S, A))
    transitions = np.zeros((H, S, A, S))
    reward_mixtures, transition_mixtures = [], []
    for h in range(H):
        reward = rkhs_mixture(spec, rng.uniform(0.0, 1.0, size=(num_centers, spec.dimension)),
                              rng.uniform(0.0, 1.0, size=num_centers), unit_norm=True)
        rewards[h] = np.clip(reward(points), 0.0, 1.0).reshape(S, A)

        scores = rkhs_mixture(spec, rng.uniform(0.0, 1.0, size=(num_centers, spec.dimension)),
                              rng.dirichlet(np.full(S, TRANSITION_CONCENTRATION), size=num_centers))
        probs = np.maximum(scores(points), 0.0) + floor
        probs /= probs.sum(axis=1, keepdims=True)
        transitions[h] = probs.reshape(S, A, S)
        reward_mixtures.append(reward)
        transition_mixtures.append(scores)

    logger.debug(f"generated MDP: {S} states, {A} actions, H={H}, seed={seed}")
    return EpisodicMdp(states=states, actions=actions, rewards=rewards, transitions=transitions,
                       initial_mode=initial_mode, fixed_state=fixed_state, seed=seed,
                       reward_mixtures=reward_mixtures, transition_mixtures=transition_mixtures)


def step(mdp: EpisodicMdp, h: int, s: int, a: int, rng: np.random.Generator) -> Tuple[float, int]:
    """Deterministic reward r_h(s, a) and a next state drawn from P_h(. | s, a)."""
    mdp._check_step(h)
    mdp._check_state(s)
    if not 0 <= a < mdp.num_actions:
        raise InvalidInputError(f"action index {a} out of range [0, {mdp.num_actions})")
    next_state = int(rng.choice(mdp.num_states, p=mdp.transitions[h - 1, s, a]))
    return float(mdp.rewards[h - 1, s, a]), next_state


def embed(mdp: EpisodicMdp, s: int, a: int) -> np.ndarray:
    mdp._check_state(s)
    if not 0 <= a < mdp.num_actions:
        raise InvalidInputError(f"action index {a} out of range [0, {mdp.num_actions})")
    return np.concatenate([mdp.states[s], mdp.actions[a]])


def solve_optimal(mdp: EpisodicMdp) -> ValueTables:
    """Backward induction: Q*_h = r_h + P_h V*_{h+1}, V*_h = max_a Q*_h."""
    H, S, A = mdp.rewards.shape
    v_star = np.zeros((H + 1, S))
    q_star = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        q_star[h] = mdp.rewards[h] + mdp.transitions[h] @ v_star[h + 1]
        v_star[h] = q_star[h].max(axis=1)
    return ValueTables(v_star=v_star, q_star=q_star)


def _check_policy(mdp: EpisodicMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.horizon, mdp.num_states):
        raise InvalidInputError(
            f"policy must have shape {(mdp.horizon, mdp.num_states)}, got {policy.shape}")
    if policy.min() < 0 or policy.max() >= mdp.num_actions:
        raise InvalidInputError("policy contains out-of-range action indices")
    return policy.astype(int)


def evaluate_policy(mdp: EpisodicMdp, policy: np.ndarray) -> np.ndarray:
    """
    Exact V^pi for a deterministic policy table of shape (H, S).

    Returns:
        (H + 1, S) array; the last row is zero.
    """
    policy = _check_policy(mdp, policy)
    H, S, _ = mdp.rewards.shape
    rows = np.arange(S)
    values = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        chosen = policy[h]
        values[h] = mdp.rewards[h, rows, chosen] + mdp.transitions[h, rows, chosen] @ values[h + 1]
    return values


def greedy_policy(q_values: np.ndarray) -> np.ndarray:
    """Argmax over actions of an (H, S, A) table; ties go to the lowest index."""
    return np.argmax(np.asarray(q_values), axis=2)


def monte_carlo_value(mdp: EpisodicMdp, policy: np.ndarray, s: int, episodes: int,
                      rng: np.random.Generator) -> Tuple[float, float]:
    """
    Rollout estimate of V^pi_1(s).

    Returns:
        (mean return, standard error of the mean)
    """
    policy = _check_policy(mdp, policy)
    mdp._check_state(s)
    if episodes < 2:
        raise InvalidInputError("monte_carlo_value needs at least 2 episodes")
    # vectorized over episodes: one inverse-CDF draw per step
    cdf = np.cumsum(mdp.transitions, axis=3)
    current = np.full(episodes, s, dtype=int)
    returns = np.zeros(episodes)
    for h in range(mdp.horizon):
        chosen = policy[h, current]
        returns += mdp.rewards[h, current, chosen]
        u = rng.uniform(size=episodes)
        rows = cdf[h, current, chosen]
        current = np.minimum((rows < u[:, None]).sum(axis=1), mdp.num_states - 1)
    return float(returns.mean()), float(returns.std(ddof=1) / np.sqrt(episodes))


_DUMP_COLUMNS = ["table", "h", "s", "a", "next_state", "dim", "value", "label"]


def dump_mdp(mdp: EpisodicMdp, path: Union[str, Path]) -> Path:
    """Write the MDP as a long-format CSV with 17 significant digits."""
    H, S, A = mdp.rewards.shape
    frames = [
        pd.DataFrame({"table": "meta", "label": [f"initial_mode={mdp.initial_mode.value}",
                                                  f"fixed_state={mdp.fixed_state}",
                                                  f"seed={mdp.seed}"]}),
    ]
    s_idx, dim_idx = np.indices(mdp.states.shape)
    frames.append(pd.DataFrame({"table": "state", "s": s_idx.ravel(), "dim": dim_idx.ravel(),
                                "value": mdp.states.ravel()}))
    a_idx, dim_idx = np.indices(mdp.actions.shape)
    frames.append(pd.DataFrame({"table": "action", "a": a_idx.ravel(), "dim": dim_idx.ravel(),
                                "value": mdp.actions.ravel()}))
    h_idx, s_idx, a_idx = np.indices(mdp.rewards.shape)
    frames.append(pd.DataFrame({"table": "reward", "h": h_idx.ravel() + 1, "s": s_idx.ravel(),
                                "a": a_idx.ravel(), "value": mdp.rewards.ravel()}))
    h_idx, s_idx, a_idx, n_idx = np.indices(mdp.transitions.shape)
    frames.append(pd.DataFrame({"table": "transition", "h": h_idx.ravel() + 1,
                                "s": s_idx.ravel(), "a": a_idx.ravel(),
                                "next_state": n_idx.ravel(), "value": mdp.transitions.ravel()}))
    table = pd.concat(frames, ignore_index=True).reindex(columns=_DUMP_COLUMNS)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"wrote MDP table ({len(table)} rows) to {path}")
    return path


def load_mdp(path: Union[str, Path]) -> EpisodicMdp:
    """Inverse of ``dump_mdp``; the kernel-mixture metadata is not restored."""
    table = pd.read_csv(path, float_precision="round_trip")
    meta = dict(str(label).split("=", 1) for label in table.loc[table["table"] == "meta", "label"])

    def block(name: str, index_cols: List[str]) -> Tuple[np.ndarray, np.ndarray]:
        rows = table.loc[table["table"] == name]
        return rows[index_cols].to_numpy(dtype=int), rows["value"].to_numpy(dtype=float)

    idx, values = block("state", ["s", "dim"])
    states = np.zeros(idx.max(axis=0) + 1)
    states[idx[:, 0], idx[:, 1]] = values
    idx, values = block("action", ["a", "dim"])
    actions = np.zeros(idx.max(axis=0) + 1)
    actions[idx[:, 0], idx[:, 1]] = values
    idx, values = block("reward", ["h", "s", "a"])
    idx[:, 0] -= 1
    rewards = np.zeros(idx.max(axis=0) + 1)
    rewards[tuple(idx.T)] = values
    idx, values = block("transition", ["h", "s", "a", "next_state"])
    idx[:, 0] -= 1
    transitions = np.zeros(idx.max(axis=0) + 1)
    transitions[tuple(idx.T)] = values
    return EpisodicMdp(states=states, actions=actions, rewards=rewards, transitions=transitions,
                       initial_mode=InitialStateMode(meta["initial_mode"]),
                       fixed_state=int(meta["fixed_state"]), seed=int(meta["seed"]))
