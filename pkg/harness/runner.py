"""
Seeded experiment execution and regret accounting.

Regret of episode t is V*_1(s_1^t) - V^{pi_t}_1(s_1^t), with V^{pi_t} computed
exactly by dynamic programming on the greedy policy the agent froze before
its rollout.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from agent.errors import InsufficientDataError, InvalidInputError, KrviError
from agent.kernels import EigendecayProfile, KernelSpec
from agent.krvi import KrviAgent, OptimalAgent, RandomAgent
from agent.partition import CoverTree
from agent.regression import KernelRidgeRegressor
from envs.mdp import EpisodicMdp, evaluate_policy, rkhs_mixture, solve_optimal, synth_mdp
from harness.config_manager import AGENT_KINDS, ExperimentConfig
from theory.bounds import BoundParams, solve_beta

logger = logging.getLogger(__name__)

OPTIMISM_TOL = 1e-9
MIN_FIT_POINTS = 10


@dataclass
class RegretTrace:
    """
    Per-episode record of one (agent, seed) run.

    ``frame`` columns: t, initial_state, realized_return, v_star, v_pi,
    instantaneous_regret, cumulative_regret, leaf_count_h<h>,
    ever_created_h<h>, max_depth_h<h>, leaf_total, max_capacity_ratio,
    optimistic_steps, wall_ms.
    """
    agent: str
    seed: int
    frame: pd.DataFrame
    policies: List[np.ndarray] = field(default_factory=list, repr=False)
    aborted: Optional[str] = None

    @property
    def final_regret(self) -> float:
        return float(self.frame["cumulative_regret"].iloc[-1]) if len(self.frame) else 0.0

    @property
    def optimism_fraction(self) -> float:
        """Share of visited (t, h, s) whose optimistic value is at least V*."""
        if "optimistic_steps" not in self.frame or not len(self.frame):
            return float("nan")
        horizon = len([c for c in self.frame.columns if c.startswith("leaf_count_h")]) or 1
        return float(self.frame["optimistic_steps"].sum()) / (len(self.frame) * horizon)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass(frozen=True)
class CoverageResult:
    rate: float
    beta: float
    trials: int
    held: int


def build_mdp(config: ExperimentConfig, seed: int) -> EpisodicMdp:
    env = config.env
    return synth_mdp(config.kernel_spec(), env.d_s, env.d_a, env.grid_per_dim, env.num_actions,
                     env.horizon, env.num_centers, seed=env.seed + seed,
                     initial_mode=env.initial_mode, fixed_state=env.fixed_state, floor=env.floor)


def make_agent(kind: str, config: ExperimentConfig, num_episodes: int):
    H = config.env.horizon
    if kind == "random":
        return RandomAgent(H)
    if kind == "optimal":
        return OptimalAgent(H)
    if kind in ("pi_krvi", "kovi"):
        agent_config = config.agent.to_agent_config(partition=(kind == "pi_krvi"))
        return KrviAgent(config.kernel_spec(), agent_config, H, num_episodes,
                         constants=config.theory.constants())
    raise InvalidInputError(f"unknown agent kind {kind!r}")


def run_seed(config: ExperimentConfig, kind: str, seed: int,
             num_episodes: Optional[int] = None, keep_policies: bool = True) -> RegretTrace:
    """
    One agent on one seeded environment.

    Numerical failures, including a confidence multiplier with no fixed point
    at construction, abort only this seed and are reported in ``aborted``.
    """
    if kind not in AGENT_KINDS:
        raise InvalidInputError(f"unknown agent kind {kind!r}")
    T = num_episodes or config.experiment.num_episodes
    mdp = build_mdp(config, seed)
    v_star = solve_optimal(mdp).v_star
    rng = np.random.default_rng([seed, 1])
    H = mdp.horizon
    rows, policies, aborted = [], [], None
    try:
        agent = make_agent(kind, config, T)
        for t in range(1, T + 1):
            started = time.perf_counter()
            result = agent.run_episode(mdp, rng)
            wall_ms = 1000.0 * (time.perf_counter() - started)
            s1 = result.initial_state
            v_pi = float(evaluate_policy(mdp, result.policy)[0, s1])
            row = {"t": t, "initial_state": s1, "realized_return": result.realized_return,
                   "v_star": float(v_star[0, s1]), "v_pi": v_pi,
                   "instantaneous_regret": float(v_star[0, s1]) - v_pi}
            stats_per_h = result.cover_stats or []
            for h in range(H):
                row[f"leaf_count_h{h + 1}"] = stats_per_h[h].leaf_count if stats_per_h else 1
                row[f"ever_created_h{h + 1}"] = stats_per_h[h].ever_created_count if stats_per_h else 1
                row[f"max_depth_h{h + 1}"] = stats_per_h[h].max_depth if stats_per_h else 0
            row["leaf_total"] = sum(row[f"leaf_count_h{h + 1}"] for h in range(H))
            trees = getattr(agent, "trees", None)
            row["max_capacity_ratio"] = max(tree.max_capacity_ratio() for tree in trees) if trees else 0.0
            row["optimistic_steps"] = sum(
                step.optimistic_value >= v_star[step.h - 1, step.state] - OPTIMISM_TOL
                for step in result.trajectory)
            row["wall_ms"] = wall_ms
            rows.append(row)
            if keep_policies:
                policies.append(result.policy)
            if t % max(1, T // 10) == 0:
                logger.debug(f"{kind} seed {seed}: episode {t}/{T}")
    except KrviError as exc:
        aborted = f"{type(exc).__name__}: {exc}"
        logger.warning(f"{kind} seed {seed} aborted after {len(rows)} episodes: {aborted}")
    frame = pd.DataFrame(rows)
    if len(frame):
        frame["cumulative_regret"] = frame["instantaneous_regret"].cumsum()
    return RegretTrace(agent=kind, seed=seed, frame=frame, policies=policies, aborted=aborted)


def _run_seed_job(args) -> RegretTrace:
    config, kind, seed, num_episodes = args
    return run_seed(config, kind, seed, num_episodes, keep_policies=False)


def write_trace(trace: RegretTrace, output_dir: Union[str, Path]) -> Path:
    path = Path(output_dir) / "traces" / f"{trace.agent}_seed{trace.seed}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.frame.to_csv(path, index=False, float_format="%.17g")
    return path


def run_experiment(config: ExperimentConfig, agents: Optional[Sequence[str]] = None,
                   seeds: Optional[Sequence[int]] = None, num_episodes: Optional[int] = None,
                   output_dir: Optional[Union[str, Path]] = None) -> List[RegretTrace]:
    """
    Run every (agent, seed) pair and optionally write one trace CSV per pair.

    Seeds execute in a process pool when ``experiment.workers`` > 1; each job
    owns its environment and agent.
    """
    agents = list(agents or config.experiment.agents)
    seeds = list(config.experiment.seeds if seeds is None else seeds)
    T = num_episodes or config.experiment.num_episodes
    jobs = [(config, kind, seed, T) for kind in agents for seed in seeds]
    logger.info(f"Running {len(jobs)} jobs: agents={agents} seeds={seeds} T={T}")
    if config.experiment.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.experiment.workers) as pool:
            traces = list(pool.map(_run_seed_job, jobs))
    else:
        traces = [run_seed(config, kind, seed, T) for _, kind, seed, _ in jobs]
    for trace in traces:
        if len(trace.frame):
            logger.info(f"{trace.agent} seed {trace.seed}: final regret {trace.final_regret:.4f}")
        if output_dir is not None:
            write_trace(trace, output_dir)
    return traces


def fit_loglog(t: np.ndarray, values: np.ndarray, burn_in_fraction: float = 0.2) -> SlopeFit:
    """Least-squares line through (log t, log value) over the post-burn-in tail."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if not 0.0 <= burn_in_fraction < 1.0:
        raise InvalidInputError(f"burn_in_fraction must lie in [0, 1), got {burn_in_fraction}")
    start = int(math.floor(burn_in_fraction * len(t)))
    t, values = t[start:], values[start:]
    usable = (values > 0.0) & (t > 0.0)
    if usable.sum() < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"only {int(usable.sum())} positive points after burn-in; need {MIN_FIT_POINTS}")
    fit = stats.linregress(np.log(t[usable]), np.log(values[usable]))
    return SlopeFit(slope=float(fit.slope), intercept=float(fit.intercept),
                    r_squared=float(fit.rvalue ** 2))


def fit_regret_exponent(trace: Union[RegretTrace, pd.DataFrame, np.ndarray, Sequence[float]],
                        burn_in_fraction: float = 0.2) -> SlopeFit:
    """
    Empirical regret exponent: slope of log R(t) against log t.

    Accepts a trace, its frame, or the cumulative-regret sequence for t = 1..n.
    Non-positive regret values are dropped before fitting.
    """
    if isinstance(trace, RegretTrace):
        trace = trace.frame
    if isinstance(trace, pd.DataFrame):
        return fit_loglog(trace["t"].to_numpy(), trace["cumulative_regret"].to_numpy(),
                          burn_in_fraction)
    regret = np.asarray(trace, dtype=float)
    return fit_loglog(np.arange(1, len(regret) + 1), regret, burn_in_fraction)


def recompute_cumulative_regret(mdp: EpisodicMdp, trace: RegretTrace) -> np.ndarray:
    """Cumulative regret rebuilt from the stored per-episode policies."""
    v_star = solve_optimal(mdp).v_star
    gaps = []
    for policy, s1 in zip(trace.policies, trace.frame["initial_state"].to_numpy()):
        gaps.append(v_star[0, s1] - evaluate_policy(mdp, policy)[0, s1])
    return np.cumsum(gaps)


def cover_growth_trial(dimension: int, alpha: float, records: int, seed: int = 0,
                       spec: Optional[KernelSpec] = None) -> pd.DataFrame:
    """
    Record uniform random points into a fresh cover and log its size after each one.

    Columns: t, ever_created, leaf_count, max_capacity_ratio.
    """
    spec = spec or KernelSpec.matern(0.5, 0.5, dimension)
    tree = CoverTree(dimension, alpha, spec, lam=1.0)
    rng = np.random.default_rng(seed)
    rows = []
    for t, point in enumerate(rng.uniform(0.0, 1.0, size=(records, dimension)), start=1):
        tree.record(point, 0.0)
        rows.append({"t": t, "ever_created": tree.ever_created_count,
                     "leaf_count": tree.leaf_count, "max_capacity_ratio": tree.max_capacity_ratio()})
    return pd.DataFrame(rows)


def coverage_trial(config: ExperimentConfig, trials: Optional[int] = None,
                   beta_override: Optional[float] = None) -> CoverageResult:
    """
    Empirical everywhere-coverage of |f - mu| <= beta b + slack.

    f is a fixed unit-norm kernel mixture on a box of side n^(-1/alpha); each
    trial fits a regressor to n uniform design points with bounded noise and
    checks the inequality on a dense grid of the box.
    """
    cov = config.coverage
    trials = trials or cov.trials
    if trials < 100:
        raise InvalidInputError(f"coverage needs at least 100 trials, got {trials}")
    d, n = cov.dimension, cov.design_size
    profile = EigendecayProfile(p=cov.kernel_p, alpha=cov.kernel_alpha)
    spec = KernelSpec.finite_spectrum(profile, cov.num_features, cov.seed, d)
    rho = n ** (-1.0 / cov.kernel_alpha)
    rng = np.random.default_rng(cov.seed)

    target = rkhs_mixture(spec, rng.uniform(0.0, rho, size=(cov.target_centers, d)),
                          rng.normal(size=cov.target_centers), unit_norm=True)
    axis = np.linspace(0.0, rho, cov.query_grid)
    queries = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    truth = target(queries)

    if beta_override is None:
        params = BoundParams(profile=profile, lam=cov.lam, c1=config.theory.c1, horizon=1,
                             num_episodes=n, delta=cov.delta, dimension=d,
                             constants=config.theory.constants())
        beta_val = solve_beta(params, n, n, rho)
    else:
        beta_val = float(beta_override)

    held = 0
    for _ in range(trials):
        design = rng.uniform(0.0, rho, size=(n, d))
        noisy = target(design) + rng.uniform(-cov.noise, cov.noise, size=n)
        model = KernelRidgeRegressor.from_observations(spec, cov.lam, design, noisy)
        mean, stddev = model.predict_many(queries)
        if np.all(np.abs(truth - mean) <= beta_val * stddev + cov.slack):
            held += 1
    rate = held / trials
    logger.info(f"coverage {rate:.3f} over {trials} trials with beta={beta_val:.4f}")
    return CoverageResult(rate=rate, beta=beta_val, trials=trials, held=held)


def traces_by_agent(traces: Sequence[RegretTrace]) -> Dict[str, List[RegretTrace]]:
    grouped: Dict[str, List[RegretTrace]] = {}
    for trace in traces:
        grouped.setdefault(trace.agent, []).append(trace)
    return grouped
