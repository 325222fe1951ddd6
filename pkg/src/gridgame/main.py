"""Command line entry point.

Loads a scenario file and solves, simulates or checks the microgrid game.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gridgame import config
from gridgame.dynamics import ContractionReport, Trajectory, check_conditions, run, run_sweep
from gridgame.errors import GameError, GridGameError, ScenarioError
from gridgame.faults import apply_faults
from gridgame.game import GameSpec, full_injection, loss_of_efficiency, solve_ne_direct
from gridgame.powerflow import slack_injection
from gridgame.report import (
    condition_lines,
    slack_lines,
    summary_text,
    sweep_summary_text,
    write_charts,
    write_sweep_csv,
    write_trajectory_csv,
)
from gridgame.scenario import Scenario, dump_scenario, load_scenario, resolve_scenario_path

logger = logging.getLogger(__name__)


@dataclass
class RunReport:
    name: str
    buses: list[int]
    p_gen_mw: list[float]
    theta_rad: list[float]
    conditions: ContractionReport
    slack_mw: float
    active_set: list[str] = field(default_factory=list)
    loe: float | None = None
    steps: float | None = None
    terminal: str | None = None
    artifacts: list[str] = field(default_factory=list)

    @property
    def slack_nonnegative(self) -> bool:
        return self.slack_mw >= 0

    def to_dict(self) -> dict:
        return {**dataclasses.asdict(self), "slack_nonnegative": self.slack_nonnegative}


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(config.EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _slack_mw(spec: GameSpec, buses, p_gen) -> float:
    gen = dict(zip(buses, p_gen))
    p_net = [gen.get(pl.bus, 0.0) - pl.p_load for pl in spec.players]
    return slack_injection(spec.net, full_injection(spec, p_net)) * spec.net.base_mva


def cmd_solve(scenario: Scenario) -> RunReport:
    """Direct equilibrium, contraction constants and loss of efficiency."""
    spec = scenario.spec
    base = spec.net.base_mva
    eq = solve_ne_direct(spec)
    loe = None
    if spec.team_weights is not None:
        try:
            loe = loss_of_efficiency(spec)
        except GameError as exc:
            logger.warning("%s", exc)
    return RunReport(
        name=scenario.name,
        buses=list(eq.buses),
        p_gen_mw=[float(g) * base for g in eq.p_gen],
        theta_rad=[float(t) for t in eq.player_angles],
        conditions=check_conditions(spec, scenario.config),
        slack_mw=_slack_mw(spec, eq.buses, eq.p_gen),
        active_set=[status.value for status in eq.active_set],
        loe=loe,
    )


def parse_seeds(text) -> range:
    """Inclusive seed range ``A..B``."""
    try:
        first, last = (int(part) for part in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if first < 0 or last < first:
        raise argparse.ArgumentTypeError(f"empty or negative seed range {text!r}")
    return range(first, last + 1)


def cmd_run(scenario: Scenario, out_dir, seeds=None, jobs=1) -> RunReport:
    """Simulate the configured scheme and write the run artifacts to ``out_dir``."""
    spec, cfg, timeline, name = scenario
    base = spec.net.base_mva
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    conditions = check_conditions(spec, cfg)

    if seeds is not None:
        trajectories = run_sweep(spec, cfg, seeds, timeline=timeline, workers=jobs)
        sweep_csv = write_sweep_csv(trajectories, base, out_dir / config.SWEEP_CSV)
        summary = out_dir / config.SUMMARY_TXT
        summary.write_text(sweep_summary_text(name, trajectories, cfg.scheme.value), encoding="utf-8")
        last = trajectories[-1]
        return RunReport(
            name=name,
            buses=list(last.buses),
            p_gen_mw=[float(g) * base for g in last.final.p_gen],
            theta_rad=[float(t) for t in last.final.theta],
            conditions=conditions,
            slack_mw=_final_slack(spec, timeline, last),
            steps=float(np.median([t.status.step for t in trajectories])),
            terminal=f"{sum(t.status.converged for t in trajectories)}/{len(trajectories)} converged",
            artifacts=[str(sweep_csv), str(summary)],
        )

    traj = run(spec, cfg, timeline=timeline)
    slack_mw = _final_slack(spec, timeline, traj)
    applied = [ev.describe() for ev in timeline if ev.at_step in traj.fault_steps]
    csv_path = write_trajectory_csv(traj, base, out_dir / config.TRAJECTORY_CSV)
    summary = out_dir / config.SUMMARY_TXT
    summary.write_text(
        summary_text(name, traj, base, cfg.scheme.value, cfg.seed, slack_mw, conditions, applied), encoding="utf-8"
    )
    charts = write_charts(traj, base, out_dir)
    return RunReport(
        name=name,
        buses=list(traj.buses),
        p_gen_mw=[float(g) * base for g in traj.final.p_gen],
        theta_rad=[float(t) for t in traj.final.theta],
        conditions=conditions,
        slack_mw=slack_mw,
        steps=traj.status.step,
        terminal=str(traj.status),
        artifacts=[str(csv_path), str(summary)] + [str(c) for c in charts],
    )


def _final_slack(spec, timeline, traj: Trajectory) -> float:
    applied = [ev for ev in timeline if ev.at_step in traj.fault_steps]
    return _slack_mw(apply_faults(spec, applied), traj.buses, traj.final.p_gen)


def cmd_check(scenario: Scenario) -> tuple[str, bool]:
    """Condition report text and whether the configured scheme's condition holds."""
    report = check_conditions(scenario.spec, scenario.config)
    met = report.condition_met(scenario.config.scheme)
    lines = [f"scenario: {scenario.name}", f"scheme: {scenario.config.scheme.value}"] + condition_lines(report)
    return "\n".join(lines) + "\n", met


def format_solve(report: RunReport) -> str:
    lines = [f"scenario: {report.name}", "", "bus  p_gen_mw     theta_rad      status"]
    for bus, gen, theta, status in zip(report.buses, report.p_gen_mw, report.theta_rad, report.active_set):
        lines.append(f"{bus:<4} {gen:<12.6f} {theta:<14.6e} {status}")
    lines.append("")
    lines += condition_lines(report.conditions)
    lines += slack_lines(report.slack_mw)
    lines.append(f"LOE={report.loe:.6f}" if report.loe is not None else "LOE=n/a")
    return "\n".join(lines) + "\n"


def format_run(report: RunReport) -> str:
    lines = [f"scenario: {report.name}", f"terminal: {report.terminal}"]
    for bus, gen in zip(report.buses, report.p_gen_mw):
        lines.append(f"bus {bus}: {gen:.6f} MW")
    lines += [f"wrote {path}" for path in report.artifacts]
    return "\n".join(lines) + "\n"


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text", help="output format")
    common.add_argument("--seed", type=int, help="override the scenario's RNG seed")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logs")

    parser = ArgumentParser(prog="gridgame", description="Microgrid generation game solver and simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", parents=[common], help="compute the Nash equilibrium")
    solve.add_argument("scenario")
    run_cmd = sub.add_parser("run", parents=[common], help="simulate an update scheme")
    run_cmd.add_argument("scenario")
    run_cmd.add_argument("--out", required=True, help="output directory")
    run_cmd.add_argument("--seeds", type=parse_seeds, help="seed sweep A..B (inclusive)")
    run_cmd.add_argument("--jobs", type=int, default=1, help="worker processes for a sweep")
    check = sub.add_parser("check", parents=[common], help="check the convergence conditions")
    check.add_argument("scenario")
    normalize = sub.add_parser("normalize", parents=[common], help="print the scenario in canonical form")
    normalize.add_argument("scenario")
    return parser


def _load(args) -> Scenario:
    scenario = load_scenario(resolve_scenario_path(args.scenario))
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ScenarioError(f"--seed {args.seed} is not an unsigned 64-bit integer")
        scenario = scenario._replace(config=dataclasses.replace(scenario.config, seed=args.seed))
    return scenario


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        scenario = _load(args)
        if args.command == "solve":
            report = cmd_solve(scenario)
            print(json.dumps(report.to_dict(), indent=2) if args.format == "json" else format_solve(report), end="")
        elif args.command == "run":
            if args.jobs < 1:
                raise ScenarioError("--jobs must be at least 1")
            report = cmd_run(scenario, args.out, args.seeds, args.jobs)
            print(json.dumps(report.to_dict(), indent=2) if args.format == "json" else format_run(report), end="")
        elif args.command == "check":
            text, met = cmd_check(scenario)
            if args.format == "json":
                report = check_conditions(scenario.spec, scenario.config)
                print(json.dumps({**dataclasses.asdict(report), "condition_met": met}, indent=2))
            else:
                print(text, end="")
            return config.EXIT_OK if met else config.EXIT_CONDITION_NOT_MET
        else:
            print(json.dumps(dump_scenario(scenario), indent=2))
    except (ScenarioError, OSError) as exc:
        logger.error("%s", exc)
        return config.EXIT_USAGE
    except GridGameError as exc:
        logger.error("%s", exc)
        return config.EXIT_SOLVER_ERROR
    return config.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
