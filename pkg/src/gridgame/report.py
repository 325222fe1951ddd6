"""Run artifacts: trajectory CSV, sweep CSV, text summary and SVG charts."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from gridgame import config
from gridgame.dynamics import ContractionReport, Trajectory

logger = logging.getLogger(__name__)

SVG_RC = {"svg.hashsalt": "gridgame", "svg.fonttype": "path"}


def trajectory_frame(traj: Trajectory, base_mva: float) -> pd.DataFrame:
    """One row per tracked player per recorded step."""
    rows = [
        (rec.step, bus, rec.p_gen[k] * base_mva, rec.theta[k], rec.step_change * base_mva)
        for rec in traj.records
        for k, bus in enumerate(traj.buses)
    ]
    frame = pd.DataFrame(rows, columns=list(config.TRAJECTORY_COLUMNS))
    return frame.astype({"step": "int64", "bus": "int64"})


def write_trajectory_csv(traj: Trajectory, base_mva: float, path) -> Path:
    path = Path(path)
    trajectory_frame(traj, base_mva).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    logger.info("wrote %s", path)
    return path


def sweep_frame(trajectories: Sequence[Trajectory], base_mva: float) -> pd.DataFrame:
    if not trajectories:
        return pd.DataFrame(columns=["seed", "status", "steps"])
    buses = trajectories[0].buses
    rows = []
    for traj in trajectories:
        row = {
            "seed": traj.seed,
            "status": "converged" if traj.status.converged else "max_steps",
            "steps": traj.status.step,
        }
        row.update({f"{bus}_p_gen_mw": traj.final.p_gen[k] * base_mva for k, bus in enumerate(buses)})
        rows.append(row)
    return pd.DataFrame(rows)


def write_sweep_csv(trajectories, base_mva, path) -> Path:
    path = Path(path)
    sweep_frame(trajectories, base_mva).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    logger.info("wrote %s", path)
    return path


def condition_lines(report: ContractionReport) -> list[str]:
    """Human-readable verdicts of the contraction conditions."""
    lines = [f"ratio_max={report.ratio_max:.3f}"]
    if report.iua_condition_met:
        lines.append(f"c1={report.c1:.3f} < 1: satisfied")
    else:
        lines.append(f"c1={report.c1:.3f}: NOT satisfied")
    if report.c2 is not None:
        lines.append(f"c2={report.c2:.3f}")
        product = f"{report.tau_max:g}·{report.c1:.3f}={report.tau_max * report.c1:.3f}"
        if report.rua_condition_met:
            lines.append(f"{product} < {report.tau_min:g}: satisfied")
        else:
            lines.append(f"{product}: NOT satisfied")
    return lines


def slack_lines(slack_mw: float) -> list[str]:
    verdict = "satisfied" if slack_mw >= 0 else "NOT satisfied"
    return [f"slack output: {slack_mw:.6f} MW", f"slack output >= 0: {verdict}"]


def summary_text(
    name: str,
    traj: Trajectory,
    base_mva: float,
    scheme: str,
    seed: int,
    slack_mw: float,
    report: ContractionReport,
    faults: Sequence[str] = (),
) -> str:
    final = traj.final
    lines = [
        f"scenario: {name}",
        f"scheme: {scheme}",
        f"seed: {seed}",
        f"terminal status: {traj.status}",
        "",
        "bus  p_gen_mw     theta_rad",
    ]
    for k, bus in enumerate(traj.buses):
        lines.append(f"{bus:<4} {final.p_gen[k] * base_mva:<12.6f} {final.theta[k]:.6e}")
    lines += [""] + slack_lines(slack_mw) + [""]
    lines += condition_lines(report)
    lines += ["", "faults applied:"]
    lines += [f"  {fault}" for fault in faults] or ["  none"]
    return "\n".join(lines) + "\n"


def sweep_summary_text(name: str, trajectories: Sequence[Trajectory], scheme: str) -> str:
    steps = np.array([t.status.step for t in trajectories])
    converged = sum(t.status.converged for t in trajectories)
    lines = [
        f"scenario: {name}",
        f"scheme: {scheme}",
        f"runs: {len(trajectories)}",
        f"converged: {converged}",
        f"median steps: {float(np.median(steps)) if steps.size else float('nan'):.1f}",
    ]
    return "\n".join(lines) + "\n"


def plot_series(traj: Trajectory, values: np.ndarray, ylabel: str, title: str, path) -> Path:
    """Line chart with one series per tracked player; fault steps as dashed lines."""
    path = Path(path)
    steps = [rec.step for rec in traj.records]
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(6.4, 4.0))
        ax = fig.add_subplot()
        for k, bus in enumerate(traj.buses):
            ax.plot(steps, values[:, k], marker="o", markersize=3, label=f"bus {bus}")
        for step in traj.fault_steps:
            ax.axvline(step, color="grey", linestyle="--", linewidth=1)
        ax.set_xlabel("time step")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.info("wrote %s", path)
    return path


def write_charts(traj: Trajectory, base_mva: float, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    gen = plot_series(
        traj, traj.p_gen_matrix() * base_mva, "generation (MW)", "Microgrid generation",
        out_dir / config.GENERATION_SVG,
    )
    angles = plot_series(
        traj, traj.theta_matrix(), "voltage angle (rad)", "Microgrid bus angles", out_dir / config.ANGLES_SVG
    )
    return gen, angles
