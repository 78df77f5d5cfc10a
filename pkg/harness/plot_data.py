"""Tabular plot data: long-format regret curves and per-agent summaries."""

import logging
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from agent.errors import InsufficientDataError, InvalidInputError
from harness.runner import RegretTrace, fit_regret_exponent, traces_by_agent

logger = logging.getLogger(__name__)

LONG_FILE = "regret_long.csv"
SUMMARY_FILE = "regret_summary.csv"
LONG_COLUMNS = ["agent", "seed", "t", "cumulative_regret", "leaf_total"]


def long_frame(traces: Sequence[RegretTrace]) -> pd.DataFrame:
    frames = []
    for trace in traces:
        if not len(trace.frame):
            continue
        frame = trace.frame.reindex(columns=["t", "cumulative_regret", "leaf_total"])
        frame.insert(0, "seed", trace.seed)
        frame.insert(0, "agent", trace.agent)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=LONG_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def summary_frame(traces: Sequence[RegretTrace], burn_in_fraction: float = 0.2,
                  confidence: float = 0.95) -> pd.DataFrame:
    """
    One row per agent: mean final regret and the fitted log-log slope.

    The slope is fitted per seed; the interval is a Student-t interval over
    seeds (NaN with fewer than two fits).
    """
    rows = []
    for agent, group in traces_by_agent(traces).items():
        finals = [trace.final_regret for trace in group if len(trace.frame)]
        slopes = []
        for trace in group:
            try:
                slopes.append(fit_regret_exponent(trace, burn_in_fraction).slope)
            except (InsufficientDataError, KeyError):
                logger.debug(f"{agent} seed {trace.seed}: no slope fit")
        slope = float(np.mean(slopes)) if slopes else float("nan")
        low = high = float("nan")
        if len(slopes) > 1:
            sem = stats.sem(slopes)
            if sem > 0:
                low, high = stats.t.interval(confidence, len(slopes) - 1, loc=slope, scale=sem)
            else:
                low = high = slope
        rows.append({"agent": agent,
                     "mean_final_regret": float(np.mean(finals)) if finals else float("nan"),
                     "fitted_slope": slope, "slope_ci_low": float(low), "slope_ci_high": float(high),
                     "num_seeds": len(group)})
    return pd.DataFrame(rows, columns=["agent", "mean_final_regret", "fitted_slope",
                                       "slope_ci_low", "slope_ci_high", "num_seeds"])


def emit_plot_data(traces: Sequence[RegretTrace], out_dir: Union[str, Path],
                   burn_in_fraction: float = 0.2) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    long_path, summary_path = out / LONG_FILE, out / SUMMARY_FILE
    long_frame(traces).to_csv(long_path, index=False, float_format="%.17g")
    summary_frame(traces, burn_in_fraction).to_csv(summary_path, index=False, float_format="%.17g")
    logger.info(f"Plot data written to {out}")
    return [long_path, summary_path]


def load_traces(in_dir: Union[str, Path]) -> List[RegretTrace]:
    """Read back trace CSVs written by ``run_experiment`` (``<agent>_seed<k>.csv``)."""
    root = Path(in_dir)
    trace_dir = root / "traces" if (root / "traces").is_dir() else root
    traces = []
    for path in sorted(trace_dir.glob("*_seed*.csv")):
        agent, _, seed = path.stem.rpartition("_seed")
        try:
            seed_value = int(seed)
        except ValueError:
            logger.warning(f"Skipping {path.name}: no seed suffix")
            continue
        frame = pd.read_csv(path, float_precision="round_trip")
        traces.append(RegretTrace(agent=agent, seed=seed_value, frame=frame))
    if not traces:
        raise InvalidInputError(f"no trace files found under {root}")
    return traces
