#!/usr/bin/env python3
"""
Command-line entry point.

    python -m harness.main run --config config/experiment_config.json --seed 3 --out results
    python -m harness.main verify --config config/experiment_config.json
    python -m harness.main bounds --config config/experiment_config.json --t-max 10000
    python -m harness.main coverage --config config/experiment_config.json --trials 500
    python -m harness.main plot-data --in results --out results/plots

Exit codes: 0 success, 1 a check or seed failed, 2 configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from agent.errors import ConfigurationError, KrviError
from agent.kernels import KernelFamily, eigendecay_profile
from harness.config_manager import ConfigManager, ExperimentConfig
from harness.plot_data import emit_plot_data, load_traces
from harness.runner import coverage_trial, run_experiment
from harness.verify import verify
from theory.bounds import BoundParams, bound_table

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

logger = logging.getLogger("harness")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Optimistic kernel value iteration experiments")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose logging")

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    run_parser = subparsers.add_parser("run", help="Run agents and write regret traces")
    run_parser.add_argument("--config", help="Experiment config JSON")
    run_parser.add_argument("--seed", type=int, help="Run this seed only")
    run_parser.add_argument("--out", help="Output directory")

    verify_parser = subparsers.add_parser("verify", help="Run the verification suite")
    verify_parser.add_argument("--config", help="Experiment config JSON")
    verify_parser.add_argument("--check", action="append", dest="checks",
                               help="Run only this check (repeatable)")
    verify_parser.add_argument("--out", help="Directory for verify_report.json")

    bounds_parser = subparsers.add_parser("bounds", help="Tabulate the analytic bounds")
    bounds_parser.add_argument("--config", help="Experiment config JSON")
    bounds_parser.add_argument("--t-max", type=int, help="Largest episode count")
    bounds_parser.add_argument("--points", type=int, default=20, help="Rows in the table")
    bounds_parser.add_argument("--kovi", action="store_true",
                               help="Confidence width for a single global model")

    coverage_parser = subparsers.add_parser("coverage", help="Empirical confidence coverage")
    coverage_parser.add_argument("--config", help="Experiment config JSON")
    coverage_parser.add_argument("--trials", type=int, help="Number of trials")
    coverage_parser.add_argument("--beta", type=float, help="Override the confidence multiplier")

    plot_parser = subparsers.add_parser("plot-data", help="Summarize trace CSVs for plotting")
    plot_parser.add_argument("--in", dest="in_dir", required=True, help="Directory with traces")
    plot_parser.add_argument("--out", required=True, help="Output directory")
    plot_parser.add_argument("--burn-in", type=float, default=0.2, help="Burn-in fraction")
    return parser


def _load(args: argparse.Namespace) -> ConfigManager:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["experiment.seeds"] = [args.seed]
    if getattr(args, "out", None) is not None and args.command == "run":
        overrides["experiment.output_dir"] = args.out
    if getattr(args, "t_max", None) is not None:
        overrides["theory.t_max"] = args.t_max
    if getattr(args, "trials", None) is not None:
        overrides["coverage.trials"] = args.trials
    manager = ConfigManager(getattr(args, "config", None))
    manager.load(overrides)
    return manager


def _cmd_run(manager: ConfigManager) -> int:
    config = manager.config
    out = Path(config.experiment.output_dir)
    traces = run_experiment(config, output_dir=out)
    manager.export(out / "effective_config.json")
    emit_plot_data(traces, out, config.experiment.burn_in_fraction)
    aborted = [trace for trace in traces if trace.aborted]
    for trace in aborted:
        print(f"{trace.agent} seed {trace.seed} aborted: {trace.aborted}")
    for trace in traces:
        if len(trace.frame):
            print(f"{trace.agent:>8} seed {trace.seed}: final regret {trace.final_regret:.4f}")
    print(f"Traces written to {out}")
    return EXIT_FAILED if aborted else EXIT_OK


def _cmd_verify(config: ExperimentConfig, checks: Optional[List[str]], out: Optional[str]) -> int:
    report_dir = Path(out or config.experiment.output_dir)
    report = verify(config, checks, report_dir / "verify_report.json")
    print(report.to_frame().to_string(index=False))
    print("All checks passed" if report.passed else "Some checks FAILED")
    return EXIT_OK if report.passed else EXIT_FAILED


def _cmd_bounds(config: ExperimentConfig, points: int, partitioned: bool) -> int:
    spec = config.kernel_spec()
    profile = eigendecay_profile(spec)
    params = BoundParams(profile=profile, lam=config.agent.lam, c1=config.theory.c1,
                         horizon=config.env.horizon, num_episodes=config.theory.t_max,
                         delta=config.agent.delta, dimension=spec.dimension,
                         nu=config.kernel.nu if spec.family is KernelFamily.MATERN else None,
                         constants=config.theory.constants())
    t_values = np.unique(np.geomspace(2, config.theory.t_max, points).astype(int))
    table = bound_table(params, t_values, partitioned=partitioned)
    out = Path(config.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "bounds.csv", index=False, float_format="%.17g")
    print(f"Constants: {config.theory.constants().to_dict()}")
    print(table.to_string(index=False))
    return EXIT_OK


def _cmd_coverage(config: ExperimentConfig, beta: Optional[float]) -> int:
    result = coverage_trial(config, beta_override=beta)
    target = 1.0 - config.coverage.delta
    print(f"coverage {result.rate:.4f} ({result.held}/{result.trials}) with beta={result.beta:.6f}; "
          f"target {target:.2f}")
    return EXIT_OK if result.rate >= target else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    if args.command is None:
        parser.print_help()
        return EXIT_FAILED

    try:
        if args.command == "plot-data":
            traces = load_traces(args.in_dir)
            for path in emit_plot_data(traces, args.out, args.burn_in):
                print(f"Wrote {path}")
            return EXIT_OK

        manager = _load(args)
        config = manager.config
        if not args.verbose:
            logging.getLogger().setLevel(config.experiment.log_level.upper())

        if args.command == "run":
            return _cmd_run(manager)
        if args.command == "verify":
            return _cmd_verify(config, args.checks, args.out)
        if args.command == "bounds":
            return _cmd_bounds(config, args.points, not args.kovi)
        if args.command == "coverage":
            return _cmd_coverage(config, args.beta)
    except ConfigurationError as exc:
        logger.error(f"Configuration error: {exc}")
        print(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except KrviError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"Error: {exc}")
        return EXIT_FAILED

    parser.print_help()
    return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
