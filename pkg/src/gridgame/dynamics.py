"""Decentralized update schemes (IUA, RUA, PDA), run loop and contraction diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from gridgame import config
from gridgame.errors import DimensionMismatch, GameError, InfeasibleInitial
from gridgame.faults import ScenarioTimeline, apply_faults
from gridgame.game import (
    Equilibrium,
    GameArrays,
    GameSpec,
    best_responses,
    full_injection,
    game_arrays,
    other_aggregates,
)
from gridgame.powerflow import solve_angles

logger = logging.getLogger(__name__)


class Scheme(str, Enum):
    IUA = "iua"
    RUA = "rua"
    PDA = "pda"


@dataclass(frozen=True)
class SchemeConfig:
    """Update scheme settings; ``tau`` follows the scenario's player order."""

    scheme: Scheme
    tau: tuple[float, ...] | None = None
    delta: float = config.DEFAULT_DELTA_PU
    max_steps: int = config.DEFAULT_MAX_STEPS
    seed: int = config.DEFAULT_SEED

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.tau is not None:
            object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        if self.scheme is Scheme.IUA:
            if self.tau is not None:
                raise GameError("tau has no meaning for the IUA scheme")
        elif self.tau is None:
            raise GameError(f"{self.scheme.value} needs update probabilities tau")
        elif any(not 0 < t < 1 for t in self.tau):
            raise GameError("update probabilities must lie in (0, 1)")
        if not self.delta > 0:
            raise GameError("stopping tolerance delta must be positive")
        if int(self.max_steps) != self.max_steps or self.max_steps < 0:
            raise GameError("max_steps must be a non-negative integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise GameError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ContractionReport:
    ratio_max: float
    c1: float
    c2: float | None
    iua_condition_met: bool
    rua_condition_met: bool | None
    tau_max: float | None = None
    tau_min: float | None = None

    def condition_met(self, scheme: Scheme) -> bool:
        if scheme is Scheme.IUA:
            return self.iua_condition_met
        return bool(self.rua_condition_met)


@dataclass(frozen=True, eq=False)
class StepRecord:
    """State after update ``step``, before that step's faults.

    All vectors follow ``Trajectory.buses``; a shut-down player reads 0 generation.
    """

    step: int
    p_gen: np.ndarray
    theta: np.ndarray
    step_change: float
    error: float | None
    updated: tuple[bool, ...]


@dataclass(frozen=True)
class TerminalStatus:
    converged: bool
    step: int

    def __str__(self):
        return f"converged at step {self.step}" if self.converged else f"max steps ({self.step}) reached"


@dataclass(frozen=True, eq=False)
class Trajectory:
    buses: tuple[int, ...]
    records: tuple[StepRecord, ...]
    status: TerminalStatus
    fault_steps: tuple[int, ...] = ()
    seed: int | None = None

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    def p_gen_matrix(self) -> np.ndarray:
        return np.array([rec.p_gen for rec in self.records])

    def theta_matrix(self) -> np.ndarray:
        return np.array([rec.theta for rec in self.records])

    def step_changes(self) -> np.ndarray:
        return np.array([rec.step_change for rec in self.records])


@dataclass(frozen=True)
class DecayReport:
    step_ratios: tuple[float, ...]
    error_ratios: tuple[float, ...] = field(default=())


def check_conditions(spec: GameSpec, cfg: SchemeConfig) -> ContractionReport:
    """Contraction constants of IUA (c1) and RUA/PDA (c2) for a spec."""
    m = spec.n_players
    s_dd = spec.s.submatrix(spec.player_buses)
    if m > 1:
        ratios = s_dd / np.diag(s_dd)[:, None]
        np.fill_diagonal(ratios, -np.inf)
        ratio_max = float(ratios.max())
    else:
        ratio_max = 0.0
    c1 = ratio_max * max(m - 1, 0)
    iua_met = c1 < 1 - config.CONDITION_MARGIN
    if cfg.tau is None:
        return ContractionReport(ratio_max, c1, None, iua_met, None)
    if len(cfg.tau) != m:
        raise DimensionMismatch(f"{len(cfg.tau)} update probabilities for {m} players")
    hi, lo = max(cfg.tau), min(cfg.tau)
    c2 = hi * c1 + (1 - lo)
    rua_met = hi * c1 < lo - config.CONDITION_MARGIN
    return ContractionReport(ratio_max, c1, c2, iua_met, rua_met, tau_max=hi, tau_min=lo)


def measured_aggregate(s_ii, theta_i, p_i):
    """Aggregate of the other injections as a PMU sees it: theta_i - s_ii P_i."""
    return theta_i - s_ii * p_i


def _aggregates(spec: GameSpec, arrays: GameArrays, state: np.ndarray, measured: bool) -> np.ndarray:
    if not measured:
        return other_aggregates(spec, state, arrays)
    angles = solve_angles(spec.s, full_injection(spec, state, arrays))
    return measured_aggregate(arrays.s_ii, angles.values[arrays.idx], state)


def _advance(spec, arrays, state, scheme, rng, tau) -> tuple[np.ndarray, np.ndarray]:
    """One step of ``scheme``; returns the new state and the mask of updating players."""
    agg = _aggregates(spec, arrays, state, measured=scheme is Scheme.PDA)
    response = best_responses(arrays, agg)
    if scheme is Scheme.IUA:
        return response, np.ones(len(state), dtype=bool)
    mask = rng.random(len(state)) < tau
    return np.where(mask, response, state), mask


def step_iua(spec: GameSpec, state, arrays: GameArrays | None = None) -> np.ndarray:
    """Every player moves to its best response against the previous step's state."""
    arrays = arrays if arrays is not None else game_arrays(spec)
    return _advance(spec, arrays, np.asarray(state, dtype=float), Scheme.IUA, None, None)[0]


def step_rua(spec: GameSpec, state, rng: np.random.Generator, tau, arrays: GameArrays | None = None) -> np.ndarray:
    """Each player independently updates with probability tau_i, else holds."""
    arrays = arrays if arrays is not None else game_arrays(spec)
    return _advance(spec, arrays, np.asarray(state, dtype=float), Scheme.RUA, rng, np.asarray(tau))[0]


def step_pda(spec: GameSpec, state, rng: np.random.Generator, tau, arrays: GameArrays | None = None) -> np.ndarray:
    """RUA driven by angle readings: all angles are measured once from ``state``."""
    arrays = arrays if arrays is not None else game_arrays(spec)
    return _advance(spec, arrays, np.asarray(state, dtype=float), Scheme.PDA, rng, np.asarray(tau))[0]


def _initial_state(spec: GameSpec, initial) -> np.ndarray:
    p_gen = np.zeros(spec.n_players) if initial is None else np.asarray(initial, dtype=float)
    if p_gen.shape != (spec.n_players,):
        raise InfeasibleInitial(f"initial generation has shape {p_gen.shape}, expected ({spec.n_players},)")
    caps = np.array([pl.p_gen_max for pl in spec.players])
    bad = [pl.bus for pl, g, cap in zip(spec.players, p_gen, caps) if not 0 <= g <= cap]
    if bad:
        raise InfeasibleInitial(f"initial generation outside [0, capacity] for buses {bad}")
    return p_gen - np.array([pl.p_load for pl in spec.players])


def run(
    spec: GameSpec,
    cfg: SchemeConfig,
    initial=None,
    timeline: ScenarioTimeline | None = None,
    reference: Equilibrium | None = None,
) -> Trajectory:
    """Iterate the configured scheme from ``initial`` generation (per-unit, zero by default).

    Stops once the step change is at most delta, every current player has
    re-evaluated its best response since the last large change or fault, and
    no fault is pending.
    """
    timeline = timeline if timeline is not None else ScenarioTimeline()
    tracked = spec.player_buses
    tau_of = dict(zip(tracked, cfg.tau)) if cfg.tau is not None else {}
    ref_gen = None
    if reference is not None:
        ref = reference.p_gen_dict()
        ref_gen = np.array([ref.get(b, 0.0) for b in tracked])

    rng = np.random.default_rng(cfg.seed)
    arrays = game_arrays(spec)
    state = _initial_state(spec, initial)
    pending = list(timeline.events)
    records = []
    fault_steps = []
    quiet: set[int] = set()

    def record(step, change, mask):
        angles = solve_angles(spec.s, full_injection(spec, state, arrays))
        gen = dict(zip(spec.player_buses, state + arrays.p_load))
        updated = dict(zip(spec.player_buses, mask))
        p_gen = np.array([gen.get(b, 0.0) for b in tracked])
        error = None if ref_gen is None else float(np.max(np.abs(p_gen - ref_gen), initial=0.0))
        records.append(
            StepRecord(
                step=step,
                p_gen=p_gen,
                theta=np.array([angles.angle(b) for b in tracked]),
                step_change=change,
                error=error,
                updated=tuple(bool(updated.get(b, False)) for b in tracked),
            )
        )

    def apply_due(step):
        nonlocal spec, arrays, state, pending
        due = [ev for ev in pending if ev.at_step == step]
        if not due:
            return False
        pending = [ev for ev in pending if ev.at_step != step]
        current = dict(zip(spec.player_buses, state))
        spec = apply_faults(spec, due)
        arrays = game_arrays(spec)
        state = np.array([current[b] for b in spec.player_buses])
        fault_steps.append(step)
        for ev in due:
            logger.info("fault applied: %s", ev.describe())
        return True

    record(0, 0.0, np.zeros(len(state), dtype=bool))
    apply_due(0)
    status = TerminalStatus(False, cfg.max_steps)
    for n in range(1, cfg.max_steps + 1):
        tau = np.array([tau_of[b] for b in spec.player_buses]) if tau_of else None
        new, mask = _advance(spec, arrays, state, cfg.scheme, rng, tau)
        change = float(np.max(np.abs(new - state), initial=0.0))
        state = new
        if change > cfg.delta:
            quiet = set()
        else:
            quiet.update(b for b, u in zip(spec.player_buses, mask) if u)
        record(n, change, mask)
        if apply_due(n):
            quiet = set()
            continue
        if not pending and change <= cfg.delta and quiet.issuperset(spec.player_buses):
            status = TerminalStatus(True, n)
            break

    if status.converged:
        logger.info("%s run (seed %d) converged at step %d", cfg.scheme.value, cfg.seed, status.step)
    else:
        logger.warning("%s run (seed %d) stopped at max_steps=%d", cfg.scheme.value, cfg.seed, cfg.max_steps)
    return Trajectory(
        buses=tracked,
        records=tuple(records),
        status=status,
        fault_steps=tuple(fault_steps),
        seed=None if cfg.scheme is Scheme.IUA else cfg.seed,
    )


def _ratios(values, skip=()) -> tuple[float, ...]:
    out = []
    for n in range(len(values) - 1):
        if values[n] > 1e-12 and n not in skip:
            out.append(values[n + 1] / values[n])
    return tuple(out)


def contraction_diagnostic(traj: Trajectory, reference: Equilibrium | None = None) -> DecayReport:
    """Per-step decay ratios of the step change and, given a reference, of the error.

    Ratios never straddle a fault.
    """
    changes = traj.step_changes()[1:]
    skip = {s - 1 for s in traj.fault_steps}
    step_ratios = _ratios(changes, skip)
    if reference is None:
        return DecayReport(step_ratios)
    ref = reference.p_gen_dict()
    ref_gen = np.array([ref.get(b, 0.0) for b in traj.buses])
    errors = np.max(np.abs(traj.p_gen_matrix() - ref_gen), axis=1)
    return DecayReport(step_ratios, _ratios(errors, set(traj.fault_steps)))


def mean_error_profile(
    spec: GameSpec,
    cfg: SchemeConfig,
    reference: Equilibrium,
    seeds: Sequence[int],
    n_steps: int,
    initial=None,
) -> np.ndarray:
    """Seed-averaged max-norm distance to ``reference`` over a fixed horizon, without early stop."""
    arrays = game_arrays(spec)
    start = _initial_state(spec, initial)
    tau = np.asarray(cfg.tau) if cfg.tau is not None else None
    errors = np.zeros((len(seeds), n_steps + 1))
    for k, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        state = start
        errors[k, 0] = np.max(np.abs(state - reference.p_net), initial=0.0)
        for n in range(1, n_steps + 1):
            state, _ = _advance(spec, arrays, state, cfg.scheme, rng, tau)
            errors[k, n] = np.max(np.abs(state - reference.p_net), initial=0.0)
    return errors.mean(axis=0)


def fit_geometric_rate(errors) -> float:
    """Geometric decay rate from a least-squares line through log(error).

    Uses the leading run of errors that stay above 1e-12 of the first one.
    """
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0 or not errors[0] > 0:
        raise ValueError("error profile must start with a positive error")
    below = np.flatnonzero(errors <= 1e-12 * errors[0])
    usable = errors[: below[0]] if below.size else errors
    if usable.size < 2:
        raise ValueError("need at least two errors above the noise floor to fit a rate")
    slope = np.polyfit(np.arange(usable.size), np.log(usable), 1)[0]
    return float(np.exp(slope))


def run_sweep(
    spec: GameSpec,
    cfg: SchemeConfig,
    seeds: Sequence[int],
    initial=None,
    timeline: ScenarioTimeline | None = None,
    workers: int = 1,
) -> list[Trajectory]:
    """Independent runs, one per seed, fanned out over ``workers`` processes."""
    configs = [SchemeConfig(cfg.scheme, cfg.tau, cfg.delta, cfg.max_steps, seed) for seed in seeds]
    return Parallel(n_jobs=workers)(delayed(run)(spec, c, initial, timeline) for c in configs)
