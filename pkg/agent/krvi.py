"""
Optimistic kernel value iteration agents.

``KrviAgent`` runs least-squares value iteration with an upper-confidence
bonus; with ``partition_enabled`` every step keeps an adaptive cover of the
state-action domain and fits one kernel ridge model per cover element,
otherwise a single global model per step (the KOVI baseline).
``RandomAgent`` and ``OptimalAgent`` share the episode interface so the
harness can benchmark them side by side.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from agent.errors import ConfigurationError, InvalidInputError, NotPolynomialEigendecayError
from agent.kernels import EigendecayProfile, KernelSpec, eigendecay_profile
from agent.partition import CoverStats, CoverTree
from envs.mdp import EpisodicMdp, embed, greedy_policy, solve_optimal, step
from theory.bounds import BoundConstants, BoundParams, solve_beta


class BetaMode(Enum):
    """How the confidence multiplier is chosen."""
    FIXED_CONSTANT = "fixed_constant"
    THEORY_FIXED_POINT = "theory_fixed_point"


@dataclass
class AgentConfig:
    """Agent hyperparameters."""
    lam: float = 0.1
    beta_mode: BetaMode = BetaMode.FIXED_CONSTANT
    c_beta: float = 0.6
    delta: float = 0.1
    alpha_override: Optional[float] = None
    partition_enabled: bool = True

    def __post_init__(self):
        if isinstance(self.beta_mode, str):
            self.beta_mode = BetaMode(self.beta_mode)
        if not self.lam > 0.0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.c_beta > 0.0:
            raise InvalidInputError(f"c_beta must be positive, got {self.c_beta}")
        if self.alpha_override is not None and not self.alpha_override > 0.0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha_override}")


def beta(config: AgentConfig, H: int, T: int, profile: Optional[EigendecayProfile] = None,
         constants: Optional[BoundConstants] = None, alpha: Optional[float] = None) -> float:
    """
    Confidence multiplier for a run of T episodes with horizon H.

    FIXED_CONSTANT gives c_beta * H * sqrt(max(log(T H / delta), 1)).
    THEORY_FIXED_POINT solves the confidence-width condition at t = N = T on
    an element of side T^(-1/alpha) (side 1 without partitioning); it needs
    the kernel's eigendecay profile.
    """
    if T < 1 or H < 1:
        raise InvalidInputError(f"T and H must be >= 1, got T={T}, H={H}")
    if config.beta_mode is BetaMode.FIXED_CONSTANT:
        return config.c_beta * H * math.sqrt(max(math.log(T * H / config.delta), 1.0))
    if profile is None:
        raise InvalidInputError("theory beta needs an eigendecay profile")
    alpha = alpha or config.alpha_override or profile.alpha
    params = BoundParams(profile=profile, lam=config.lam, horizon=H, num_episodes=T,
                         delta=config.delta, constants=constants or BoundConstants())
    rho_element = T ** (-1.0 / alpha) if config.partition_enabled else 1.0
    return solve_beta(params, T, T, rho_element)


@dataclass(frozen=True)
class Transition:
    """One step of an episode, with the Q row the action was chosen from."""
    h: int
    state: int
    action: int
    reward: float
    next_state: int
    q_row: np.ndarray = field(repr=False)
    optimistic_value: float = float("nan")


@dataclass
class EpisodeResult:
    """
    Outcome of one episode.

    ``policy`` is the (H, S) greedy table the episode was played with, frozen
    before the rollout, so V^pi of the episode can be evaluated exactly.
    """
    t: int
    initial_state: int
    trajectory: List[Transition]
    realized_return: float
    policy: np.ndarray
    cover_stats: List[CoverStats] = field(default_factory=list)


class OptimisticQ:
    """
    Q_h(s, .) = min(mu + beta b, H - h + 1) evaluated lazily per step and cached.

    The whole (S, A) table of a step is computed in one batch on first use.
    Tables are valid only while the models are unchanged; a fresh instance is
    built by every call to ``KrviAgent.plan_episode``.
    """

    def __init__(self, models: List[CoverTree], mdp: EpisodicMdp, beta_val: float):
        self.models = models
        self.mdp = mdp
        self.beta_val = beta_val
        self._points = mdp.joint_points()
        self._tables: Dict[int, np.ndarray] = {}

    def table(self, h: int) -> np.ndarray:
        cached = self._tables.get(h)
        if cached is None:
            mean, stddev = self.models[h - 1].query_many(self._points)
            cap = self.mdp.horizon - h + 1
            cached = np.minimum(mean + self.beta_val * stddev, cap).reshape(
                self.mdp.num_states, self.mdp.num_actions)
            self._tables[h] = cached
        return cached

    def row(self, h: int, s: int) -> np.ndarray:
        self.mdp._check_state(s)
        return self.table(h)[s]

    def value(self, h: int, s: int) -> float:
        """V_h(s) = max(0, max_a Q_h(s, a)); zero past the horizon."""
        if h > self.mdp.horizon:
            return 0.0
        return max(0.0, float(self.row(h, s).max()))

    def policy_table(self) -> np.ndarray:
        """(H, S) greedy actions; ties go to the lowest action index."""
        return np.stack([np.argmax(self.table(h), axis=1)
                         for h in range(1, self.mdp.horizon + 1)]).astype(int)


def act(qfun: OptimisticQ, mdp: EpisodicMdp, h: int, s: int) -> int:
    """Greedy action; ties go to the lowest action index."""
    return int(np.argmax(qfun.row(h, s)))


class KrviAgent:
    """
    Optimistic least-squares value iteration over kernel ridge models.

    Args:
        spec: kernel on the joint state-action space
        config: agent hyperparameters
        horizon: episode length H
        num_episodes: planned number of episodes T (enters beta)
        constants: bound constants used by the theory beta mode
    """

    def __init__(self, spec: KernelSpec, config: AgentConfig, horizon: int, num_episodes: int,
                 constants: Optional[BoundConstants] = None):
        self.logger = logging.getLogger(__name__)
        self.spec = spec
        self.config = config
        self.horizon = horizon
        self.num_episodes = num_episodes
        self.alpha = self._splitting_alpha()
        profile = None
        if config.beta_mode is BetaMode.THEORY_FIXED_POINT:
            profile = eigendecay_profile(spec)
        self.beta_value = beta(config, horizon, num_episodes, profile, constants, self.alpha)
        self.trees = [CoverTree(spec.dimension, self.alpha, spec, config.lam,
                                split=config.partition_enabled) for _ in range(horizon)]
        self.raw_history: List[List[Tuple[float, int]]] = [[] for _ in range(horizon)]
        self.episode_index = 0
        self.logger.debug(f"agent ready: partition={config.partition_enabled} "
                          f"alpha={self.alpha:.3f} beta={self.beta_value:.4f}")

    @property
    def name(self) -> str:
        return "pi_krvi" if self.config.partition_enabled else "kovi"

    def _splitting_alpha(self) -> float:
        if self.config.alpha_override is not None:
            return self.config.alpha_override
        try:
            return eigendecay_profile(self.spec).alpha
        except NotPolynomialEigendecayError as exc:
            if not self.config.partition_enabled:
                return 1.0
            raise ConfigurationError("agent.alpha", f"set explicitly: {exc}") from exc

    def plan_episode(self, mdp: EpisodicMdp, beta_val: Optional[float] = None) -> OptimisticQ:
        """
        Refresh every stored target backward from h = H and return the optimistic Q.

        The target of a stored transition at step h is r + V_{h+1}(s') under the
        Q of this episode; point sets do not change, only the targets.
        """
        if mdp.horizon != self.horizon:
            raise InvalidInputError(f"agent horizon {self.horizon} != MDP horizon {mdp.horizon}")
        qfun = OptimisticQ(self.trees, mdp, self.beta_value if beta_val is None else beta_val)
        for h in range(self.horizon, 0, -1):
            history = self.raw_history[h - 1]
            if not history:
                continue
            rewards = np.fromiter((r for r, _ in history), dtype=float, count=len(history))
            next_states = np.fromiter((s for _, s in history), dtype=int, count=len(history))
            if h == self.horizon:
                targets = rewards
            else:
                unique = np.unique(next_states)
                values = {int(s): qfun.value(h + 1, int(s)) for s in unique}
                targets = rewards + np.array([values[int(s)] for s in next_states])
            self.trees[h - 1].refit_targets(targets)
        return qfun

    def run_episode(self, mdp: EpisodicMdp, rng: np.random.Generator,
                    beta_val: Optional[float] = None, freeze_policy: bool = True) -> EpisodeResult:
        """Plan, roll the MDP forward H steps greedily and record every transition."""
        t = self.episode_index + 1
        qfun = self.plan_episode(mdp, beta_val)
        policy = qfun.policy_table() if freeze_policy else None
        s = initial = mdp.initial_state(t)
        trajectory = []
        realized = 0.0
        for h in range(1, self.horizon + 1):
            a = int(policy[h - 1, s]) if policy is not None else act(qfun, mdp, h, s)
            q_row = qfun.row(h, s)
            optimistic = qfun.value(h, s)
            reward, s_next = step(mdp, h, s, a, rng)
            # step h only touches tree h, so V_{h+1} under this plan is still valid
            target = reward + qfun.value(h + 1, s_next)
            self.trees[h - 1].record(embed(mdp, s, a), target)
            self.raw_history[h - 1].append((reward, s_next))
            trajectory.append(Transition(h, s, a, reward, s_next, q_row.copy(), optimistic))
            realized += reward
            s = s_next
        self.episode_index = t
        if policy is None:
            policy = qfun.policy_table()
        return EpisodeResult(t=t, initial_state=initial, trajectory=trajectory,
                             realized_return=realized, policy=policy,
                             cover_stats=[tree.cover_stats() for tree in self.trees])


class _TablePolicyAgent:
    """Rolls out a per-episode (H, S) policy table."""

    name = "table"

    def __init__(self, horizon: int):
        self.horizon = horizon
        self.episode_index = 0

    def policy_for(self, mdp: EpisodicMdp, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def run_episode(self, mdp: EpisodicMdp, rng: np.random.Generator) -> EpisodeResult:
        t = self.episode_index + 1
        policy = self.policy_for(mdp, rng)
        s = initial = mdp.initial_state(t)
        trajectory = []
        realized = 0.0
        for h in range(1, self.horizon + 1):
            a = int(policy[h - 1, s])
            reward, s_next = step(mdp, h, s, a, rng)
            trajectory.append(Transition(h, s, a, reward, s_next, np.zeros(0)))
            realized += reward
            s = s_next
        self.episode_index = t
        return EpisodeResult(t=t, initial_state=initial, trajectory=trajectory,
                             realized_return=realized, policy=policy)


class RandomAgent(_TablePolicyAgent):
    """Draws a fresh uniform-random deterministic policy every episode."""

    name = "random"

    def policy_for(self, mdp: EpisodicMdp, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(mdp.num_actions, size=(mdp.horizon, mdp.num_states))


class OptimalAgent(_TablePolicyAgent):
    """Plays the greedy policy of the exact Q*."""

    name = "optimal"

    def __init__(self, horizon: int):
        super().__init__(horizon)
        self._policy: Optional[np.ndarray] = None

    def policy_for(self, mdp: EpisodicMdp, rng: np.random.Generator) -> np.ndarray:
        if self._policy is None:
            self._policy = greedy_policy(solve_optimal(mdp).q_star)
        return self._policy
