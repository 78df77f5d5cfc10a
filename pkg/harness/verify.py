"""
Self-contained verification suite.

Each check builds its own inputs from the ``verify`` config section, measures
the property it guards and reports pass/fail with the measured values. A
failing or crashing check never stops the others.
"""

import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from agent.errors import KrviError
from agent.kernels import (
    EigendecayProfile,
    KernelFamily,
    KernelSpec,
    cross_gram,
    finite_spectrum_features,
    gram,
    kernel_diagonal,
)
from agent.krvi import AgentConfig, BetaMode, KrviAgent
from agent.partition import CoverTree
from agent.regression import KernelRidgeRegressor, dense_information_gain, dense_posterior
from envs.mdp import (
    EpisodicMdp,
    embed,
    evaluate_policy,
    greedy_policy,
    monte_carlo_value,
    rkhs_mixture,
    solve_optimal,
    step,
    synth_mdp,
)
from harness.config_manager import CHECK_NAMES, ExperimentConfig
from harness.runner import (
    build_mdp,
    coverage_trial,
    cover_growth_trial,
    fit_loglog,
    fit_regret_exponent,
    make_agent,
    recompute_cumulative_regret,
    run_experiment,
    run_seed,
)
from theory.bounds import BoundParams, info_gain_bound_curve, matern_regret_exponent, regret_exponent

KRR_TOLERANCE = 1e-8
PSD_TOLERANCE = 1e-8
SHRINKAGE_TOLERANCE = 1e-10
EXPONENT_TOLERANCE = 1e-12
MC_STANDARD_ERRORS = 3.0
RANDOM_REGRET_RATIO = 0.5
KOVI_REGRET_RATIO = 1.1
SUBLINEAR_SLOPE = 0.95


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: Dict[str, Any] = field(default_factory=dict)
    message: str = ""
    seconds: float = 0.0


@dataclass
class VerificationReport:
    results: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"check": r.name, "passed": r.passed, "seconds": r.seconds,
                              "message": r.message} for r in self.results])

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "checks": [asdict(r) for r in self.results]}

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=float)
        return path


class VerificationSuite:
    """
    Runs the enabled checks of ``experiment.checks``.

    Args:
        config: validated experiment configuration
    """

    def __init__(self, config: ExperimentConfig):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.sizes = config.verify
        self._checks: Dict[str, Callable[[], CheckResult]] = {
            "krr_oracle": self.check_krr_oracle,
            "partition_capacity": self.check_partition_capacity,
            "cover_growth": self.check_cover_growth,
            "info_gain_soundness": self.check_info_gain_soundness,
            "confidence_coverage": self.check_confidence_coverage,
            "regret_scaling": self.check_regret_scaling,
            "exponent_identity": self.check_exponent_identity,
            "reductions": self.check_reductions,
            "dp_oracle": self.check_dp_oracle,
            "kernel_properties": self.check_kernel_properties,
            "regression_properties": self.check_regression_properties,
            "env_properties": self.check_env_properties,
            "optimism_audit": self.check_optimism_audit,
        }
        assert set(self._checks) == set(CHECK_NAMES)

    def _rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.sizes.seed, salt])

    def run(self, checks: Optional[List[str]] = None) -> VerificationReport:
        names = list(checks or self.config.experiment.checks)
        results = []
        for name in names:
            started = time.perf_counter()
            try:
                result = self._checks[name]()
            except KrviError as exc:
                result = CheckResult(name, False, message=f"{type(exc).__name__}: {exc}")
            except Exception as exc:
                self.logger.error(f"Check {name} crashed: {exc}", exc_info=True)
                result = CheckResult(name, False, message=f"crashed: {exc}")
            result.seconds = time.perf_counter() - started
            level = logging.INFO if result.passed else logging.ERROR
            self.logger.log(level, f"[{'PASS' if result.passed else 'FAIL'}] {name} "
                                   f"({result.seconds:.1f}s) {result.measured} {result.message}")
            results.append(result)
        return VerificationReport(results)

    # --- regression --------------------------------------------------------

    def check_krr_oracle(self) -> CheckResult:
        """Incremental regressor against a dense solve on random instances."""
        rng = self._rng(1)
        worst_mean = worst_std = 0.0
        for _ in range(self.sizes.krr_instances):
            d = int(rng.integers(1, 4))
            nu = float(rng.choice([0.5, 1.5, 2.5]))
            spec = KernelSpec.matern(nu, float(rng.uniform(0.2, 1.0)), d)
            lam = float(rng.uniform(0.3, 2.0))
            n = int(rng.integers(1, self.sizes.krr_max_points + 1))
            points = rng.uniform(0.0, 1.0, size=(n, d))
            targets = rng.normal(size=n)
            queries = rng.uniform(0.0, 1.0, size=(32, d))
            model = KernelRidgeRegressor(spec, lam)
            for z, y in zip(points, targets):
                model.observe(z, y)
            mean, stddev = model.predict_many(queries)
            ref_mean, ref_std = dense_posterior(spec, lam, points, targets, queries)
            worst_mean = max(worst_mean, float(np.abs(mean - ref_mean).max()))
            worst_std = max(worst_std, float(np.abs(stddev - ref_std).max()))
        passed = worst_mean <= KRR_TOLERANCE and worst_std <= KRR_TOLERANCE
        return CheckResult("krr_oracle", passed,
                           {"max_mean_error": worst_mean, "max_stddev_error": worst_std,
                            "instances": self.sizes.krr_instances})

    def check_regression_properties(self) -> CheckResult:
        """Uncertainty never grows with data; information gain matches log det."""
        rng = self._rng(2)
        spec = KernelSpec.matern(1.5, 0.4, 2)
        model = KernelRidgeRegressor(spec, 0.7)
        queries = rng.uniform(size=(16, 2))
        previous = model.predict_many(queries)[1]
        worst_increase = 0.0
        points = rng.uniform(size=(80, 2))
        for z in points:
            model.observe(z, float(rng.normal()))
            current = model.predict_many(queries)[1]
            worst_increase = max(worst_increase, float((current - previous).max()))
            previous = current
        gain_error = abs(model.information_gain() - dense_information_gain(spec, 0.7, points))
        passed = worst_increase <= SHRINKAGE_TOLERANCE and gain_error <= 1e-8
        return CheckResult("regression_properties", passed,
                           {"max_stddev_increase": worst_increase, "info_gain_error": gain_error})

    # --- kernels -----------------------------------------------------------

    def check_kernel_properties(self) -> CheckResult:
        rng = self._rng(3)
        profile = EigendecayProfile(p=3.0, alpha=1.0)
        specs = [KernelSpec.matern(nu, 0.5, 2) for nu in (0.5, 1.5, 2.5, 0.8)]
        specs += [KernelSpec.squared_exponential(0.3, 2),
                  KernelSpec.finite_spectrum(profile, 32, 1, 2)]
        min_eig = math.inf
        worst_asym = worst_diag = 0.0
        for spec in specs:
            points = rng.uniform(size=(60, 2))
            k = gram(spec, points)
            min_eig = min(min_eig, float(np.linalg.eigvalsh(k).min()))
            cross = cross_gram(spec, points, points)
            worst_asym = max(worst_asym, float(np.abs(cross - cross.T).max()))
            if spec.is_stationary:
                worst_diag = max(worst_diag, float(np.abs(kernel_diagonal(spec, points) - 1.0).max()))
        passed = min_eig >= -PSD_TOLERANCE and worst_asym <= 1e-12 and worst_diag <= 1e-12
        return CheckResult("kernel_properties", passed,
                           {"min_eigenvalue": min_eig, "max_asymmetry": worst_asym,
                            "max_diagonal_error": worst_diag})

    # --- partition ---------------------------------------------------------

    def check_partition_capacity(self) -> CheckResult:
        """Full agent run on a d=2 joint domain; every leaf within capacity after every episode."""
        config = replace(self.config, env=replace(self.config.env, d_s=1, d_a=1),
                         kernel=replace(self.config.kernel, nu=0.5))
        mdp = build_mdp(config, 0)
        agent = make_agent("pi_krvi", config, self.sizes.capacity_episodes)
        rng = self._rng(4)
        violations = 0
        worst = 0.0
        for _ in range(self.sizes.capacity_episodes):
            agent.run_episode(mdp, rng)
            ratio = max(tree.max_capacity_ratio() for tree in agent.trees)
            worst = max(worst, ratio)
            violations += int(ratio > 1.0)
        uniform = cover_growth_trial(2, 1.0, self.sizes.cover_records, seed=self.sizes.seed)
        violations += int((uniform["max_capacity_ratio"] > 1.0).sum())
        worst = max(worst, float(uniform["max_capacity_ratio"].max()))
        return CheckResult("partition_capacity", violations == 0,
                           {"max_capacity_ratio": worst, "violations": violations,
                            "leaf_total": sum(tree.leaf_count for tree in agent.trees)})

    def check_cover_growth(self) -> CheckResult:
        """
        Ever-created count against the number of records, fitted in log-log
        from the first record on. The count grows in 2^d steps at every split,
        so a tail-only fit sees a staircase and underestimates the exponent.
        """
        dimension, alpha = 2, 1.0
        frame = cover_growth_trial(dimension, alpha, self.sizes.cover_records, seed=self.sizes.seed)
        fit = fit_loglog(frame["t"].to_numpy(), frame["ever_created"].to_numpy(), 0.0)
        target = dimension / (dimension + alpha)
        passed = abs(fit.slope - target) <= self.sizes.slope_tolerance
        return CheckResult("cover_growth", passed,
                           {"slope": fit.slope, "target": target, "r_squared": fit.r_squared,
                            "ever_created": int(frame["ever_created"].iloc[-1])})

    # --- theory ------------------------------------------------------------

    def check_info_gain_soundness(self) -> CheckResult:
        """
        Exact information gain of greedy and random designs under a finite
        spectrum kernel never exceeds the analytic bound.

        The gain is accumulated in feature space, ½ log(1 + phi^T A^-1 phi) per
        point with A = lambda^2 I + Phi^T Phi, and cross-checked against the
        dense log det on a prefix.
        """
        lam = 1.0
        profile = EigendecayProfile(p=2.0, alpha=1.0)
        spec = KernelSpec.finite_spectrum(profile, self.sizes.info_gain_features, self.sizes.seed, 1)
        t_max = self.sizes.info_gain_t
        bound = info_gain_bound_curve(BoundParams(profile=profile, lam=lam, c1=1.0, rho=1.0), t_max)
        candidates = np.linspace(0.0, 1.0, 257).reshape(-1, 1)
        cand_features = finite_spectrum_features(spec, candidates)
        rng = self._rng(5)

        measured: Dict[str, Any] = {}
        passed = True
        for design in ("greedy", "random"):
            a_inv = np.eye(spec.num_features) / lam ** 2
            scores = np.einsum("ij,ij->i", cand_features @ a_inv, cand_features)
            gain = np.zeros(t_max)
            total = 0.0
            chosen = []
            for t in range(t_max):
                if design == "greedy":
                    index = int(np.argmax(scores))
                    phi = cand_features[index]
                    chosen.append(candidates[index])
                else:
                    point = rng.uniform(size=(1, 1))
                    phi = finite_spectrum_features(spec, point).reshape(-1)
                    chosen.append(point[0])
                u = a_inv @ phi
                quad = float(phi @ u)
                total += 0.5 * math.log1p(quad)
                gain[t] = total
                a_inv -= np.outer(u, u) / (1.0 + quad)
                scores -= (cand_features @ u) ** 2 / (1.0 + quad)
            prefix = min(t_max, 200)
            dense = dense_information_gain(spec, lam, np.array(chosen[:prefix]))
            consistent = abs(dense - gain[prefix - 1]) <= 1e-6 * max(1.0, dense)
            margin = float((bound - gain).min())
            passed = passed and consistent and margin >= 0.0
            measured[f"{design}_final_gain"] = float(gain[-1])
            measured[f"{design}_min_margin"] = margin
            measured[f"{design}_dense_error"] = abs(dense - gain[prefix - 1])
        measured["final_bound"] = float(bound[-1])
        return CheckResult("info_gain_soundness", passed, measured)

    def check_confidence_coverage(self) -> CheckResult:
        result = coverage_trial(self.config, self.sizes.coverage_trials)
        target = 1.0 - self.config.coverage.delta
        return CheckResult("confidence_coverage", result.rate >= target,
                           {"coverage": result.rate, "target": target, "beta": result.beta,
                            "trials": result.trials})

    def check_exponent_identity(self) -> CheckResult:
        rng = self._rng(6)
        worst = 0.0
        for _ in range(self.sizes.exponent_pairs):
            nu = float(rng.uniform(0.1, 5.0))
            d = int(rng.integers(1, 11))
            worst = max(worst, abs(regret_exponent(d, 2.0 * nu) - matern_regret_exponent(nu, d)))
        return CheckResult("exponent_identity", worst <= EXPONENT_TOLERANCE,
                           {"max_difference": worst, "pairs": self.sizes.exponent_pairs})

    # --- agents ------------------------------------------------------------

    def check_regret_scaling(self) -> CheckResult:
        """
        Sublinear regret of the partitioned agent on the standard environment,
        its exponent against the Matérn rate, and its standing against the
        random and global-model baselines.
        """
        T = self.sizes.regret_episodes
        seeds = list(range(self.sizes.regret_seeds))
        traces = run_experiment(self.config, ["pi_krvi", "kovi", "random"], seeds, T)
        by_agent: Dict[str, List] = {}
        for trace in traces:
            if trace.aborted:
                return CheckResult("regret_scaling", False,
                                   message=f"{trace.agent} seed {trace.seed} aborted: {trace.aborted}")
            by_agent.setdefault(trace.agent, []).append(trace)
        burn_in = self.config.experiment.burn_in_fraction
        slopes = [fit_regret_exponent(trace, burn_in).slope for trace in by_agent["pi_krvi"]]
        slope = float(np.mean(slopes))
        final = {agent: float(np.mean([t.final_regret for t in group]))
                 for agent, group in by_agent.items()}
        # rate quoted for a one-dimensional state space
        target = matern_regret_exponent(self.config.kernel.nu, self.config.env.d_s)
        sublinear = slope < SUBLINEAR_SLOPE
        near_rate = abs(slope - target) <= self.sizes.slope_tolerance
        beats_random = final["pi_krvi"] <= RANDOM_REGRET_RATIO * final["random"]
        near_kovi = final["pi_krvi"] <= KOVI_REGRET_RATIO * final["kovi"]
        optimism = float(np.mean([t.optimism_fraction for t in by_agent["pi_krvi"]]))
        return CheckResult("regret_scaling", sublinear and near_rate and beats_random and near_kovi,
                           {"slope": slope, "target": target, "final_regret": final,
                            "sublinear": sublinear, "near_rate": near_rate,
                            "beats_random": beats_random, "near_kovi": near_kovi,
                            "optimism_fraction": optimism})

    def check_optimism_audit(self) -> CheckResult:
        """
        The partitioned agent with the theory multiplier under a finite-spectrum
        kernel (p~ = 4): its optimistic value dominates V* on at least 1 - delta
        of the visited (t, h, s).
        """
        config = replace(self.config,
                         kernel=replace(self.config.kernel, family=KernelFamily.FINITE_SPECTRUM,
                                        p=4.0, alpha=1.0, eta=0.0),
                         agent=replace(self.config.agent, beta_mode=BetaMode.THEORY_FIXED_POINT,
                                       alpha=None))
        trace = run_seed(config, "pi_krvi", self.sizes.seed,
                         num_episodes=self.sizes.optimism_episodes, keep_policies=False)
        if trace.aborted:
            return CheckResult("optimism_audit", False, message=f"aborted: {trace.aborted}")
        fraction = trace.optimism_fraction
        target = 1.0 - config.agent.delta
        return CheckResult("optimism_audit", fraction >= target,
                           {"optimism_fraction": fraction, "target": target,
                            "episodes": len(trace.frame)})

    def check_reductions(self) -> CheckResult:
        kovi_equal, kovi_detail = self._kovi_matches_global_regressor()
        bandit_equal, bandit_detail = self._bandit_matches_krr_ucb()
        return CheckResult("reductions", kovi_equal and bandit_equal,
                           {**kovi_detail, **bandit_detail})

    def _kovi_matches_global_regressor(self):
        """Without splitting, each step's model is bitwise one global regressor."""
        spec = KernelSpec.matern(0.5, 0.5, 2)
        mdp = synth_mdp(spec, 1, 1, 8, 4, 3, 3, seed=self.sizes.seed)
        agent = KrviAgent(spec, AgentConfig(partition_enabled=False), mdp.horizon, 40)
        rng = self._rng(7)
        for _ in range(40):
            agent.run_episode(mdp, rng)
        queries = np.array([embed(mdp, s, a) for s in range(mdp.num_states)
                            for a in range(mdp.num_actions)])
        identical = True
        for tree in agent.trees:
            single_leaf = tree.leaf_count == 1 and tree.root.children is None
            reference = KernelRidgeRegressor(spec, agent.config.lam)
            for z, y in zip(tree.points, tree.targets):
                reference.observe(z, y)
            got, expected = tree.query_many(queries), reference.predict_many(queries)
            identical = identical and single_leaf and all(
                np.array_equal(g, e) for g, e in zip(got, expected))
        return identical, {"kovi_bitwise_equal": identical}

    def _bandit_matches_krr_ucb(self):
        """H = 1 with one state is a kernel UCB bandit; replay one with dense algebra."""
        num_actions = 8
        spec = KernelSpec.matern(0.5, 0.5, 2)
        mdp = _single_state_mdp(spec, num_actions, self.sizes.seed)
        episodes = self.sizes.bandit_episodes
        agent = KrviAgent(spec, AgentConfig(partition_enabled=False), 1, episodes)
        beta_val = agent.beta_value
        lam = agent.config.lam

        rng = self._rng(8)
        agent_actions = [agent.run_episode(mdp, rng).trajectory[0].action for _ in range(episodes)]

        rng = self._rng(8)
        arms = np.array([embed(mdp, 0, a) for a in range(num_actions)])
        points, rewards, bandit_actions = [], [], []
        for _ in range(episodes):
            if points:
                X = np.array(points)
                system = gram(spec, X) + lam ** 2 * np.eye(len(points))
                k_mat = cross_gram(spec, X, arms)
                mean = k_mat.T @ np.linalg.solve(system, np.array(rewards))
                var = 1.0 - np.einsum("ij,ij->j", k_mat, np.linalg.solve(system, k_mat))
                ucb = np.minimum(mean + beta_val * np.sqrt(np.maximum(var, 0.0)), 1.0)
            else:
                ucb = np.minimum(beta_val * np.ones(num_actions), 1.0)
            a = int(np.argmax(ucb))
            reward, _ = step(mdp, 1, 0, a, rng)
            points.append(arms[a])
            rewards.append(reward)
            bandit_actions.append(a)

        best = float(mdp.rewards[0, 0].max())
        agent_regret = float(sum(best - mdp.rewards[0, 0, a] for a in agent_actions))
        bandit_regret = float(sum(best - mdp.rewards[0, 0, a] for a in bandit_actions))
        same = agent_actions == bandit_actions
        return same and abs(agent_regret - bandit_regret) <= 1e-9, {
            "bandit_actions_equal": same, "agent_regret": agent_regret,
            "bandit_regret": bandit_regret}

    # --- envs --------------------------------------------------------------

    def check_dp_oracle(self) -> CheckResult:
        """
        Backward induction against brute force over all deterministic Markov
        policies (3 states, 3 actions, H = 3), plus exact evaluation against
        Monte Carlo on a 10-state MDP.
        """
        spec = KernelSpec.matern(0.5, 0.5, 2)
        small = synth_mdp(spec, 1, 1, 3, 3, 3, 4, seed=self.sizes.seed)
        H, S, A = small.rewards.shape
        best = np.full(S, -np.inf)
        for flat in itertools.product(range(A), repeat=H * S):
            values = evaluate_policy(small, np.array(flat).reshape(H, S))[0]
            best = np.maximum(best, values)
        optimal = solve_optimal(small)
        enumeration_error = float(np.abs(best - optimal.v_star[0]).max())

        mdp = synth_mdp(spec, 1, 1, 10, 3, 3, 4, seed=self.sizes.seed + 1)
        tables = solve_optimal(mdp)
        rng = self._rng(9)
        policies = [greedy_policy(tables.q_star),
                    rng.integers(mdp.num_actions, size=(mdp.horizon, mdp.num_states))]
        worst_z = 0.0
        dominated = True
        for policy in policies:
            exact = evaluate_policy(mdp, policy)
            dominated = dominated and bool(np.all(exact[0] <= tables.v_star[0] + 1e-12))
            for s in (0, mdp.num_states // 2, mdp.num_states - 1):
                mean, stderr = monte_carlo_value(mdp, policy, s, self.sizes.dp_mc_episodes, rng)
                worst_z = max(worst_z, abs(mean - exact[0, s]) / max(stderr, 1e-12))
        passed = enumeration_error <= 1e-12 and worst_z <= MC_STANDARD_ERRORS and dominated
        return CheckResult("dp_oracle", passed,
                           {"enumeration_error": enumeration_error,
                            "max_standard_errors": worst_z, "v_star_dominates": dominated})

    def check_env_properties(self) -> CheckResult:
        spec = self.config.kernel_spec()
        mdp = build_mdp(self.config, 0)
        row_error = float(np.abs(mdp.transitions.sum(axis=3) - 1.0).max())
        in_range = bool(mdp.rewards.min() >= 0.0 and mdp.rewards.max() <= 1.0)
        points = np.array([embed(mdp, s, a) for s in range(mdp.num_states)
                           for a in range(mdp.num_actions)])
        injective = len(np.unique(points, axis=0)) == points.shape[0]
        norms = [float(m.quadratic_form.max()) for m in mdp.reward_mixtures + mdp.transition_mixtures]
        trace = run_seed(self.config, "random", 0, num_episodes=20)
        accounting = float(np.abs(recompute_cumulative_regret(mdp, trace)
                                  - trace.frame["cumulative_regret"].to_numpy()).max())
        passed = (row_error <= 1e-12 and in_range and injective
                  and max(norms) <= 1.0 + 1e-9 and accounting <= 1e-12
                  and spec.dimension == mdp.joint_dim)
        return CheckResult("env_properties", passed,
                           {"row_sum_error": row_error, "rewards_in_range": in_range,
                            "embedding_injective": injective, "max_mixture_norm": max(norms),
                            "regret_accounting_error": accounting})


def _single_state_mdp(spec: KernelSpec, num_actions: int, seed: int) -> EpisodicMdp:
    rng = np.random.default_rng(seed)
    actions = np.linspace(0.0, 1.0, num_actions).reshape(-1, 1)
    points = np.hstack([np.full((num_actions, 1), 0.5), actions])
    reward = rkhs_mixture(spec, rng.uniform(size=(3, 2)), rng.uniform(size=3), unit_norm=True)
    rewards = np.clip(reward(points), 0.0, 1.0).reshape(1, 1, num_actions)
    return EpisodicMdp(states=np.array([[0.5]]), actions=actions, rewards=rewards,
                       transitions=np.ones((1, 1, num_actions, 1)), seed=seed)


def verify(config: ExperimentConfig, checks: Optional[List[str]] = None,
           report_path: Optional[Union[str, Path]] = None) -> VerificationReport:
    report = VerificationSuite(config).run(checks)
    if report_path is not None:
        report.write(report_path)
    return report
