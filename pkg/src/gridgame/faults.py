"""Structural faults: generator outage, microgrid shutdown and line trip."""

from __future__ import annotations

import dataclasses
import functools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from gridgame.errors import GameError, UnknownBus, UnknownTarget
from gridgame.game import Equilibrium, GameSpec, solve_ne_direct
from gridgame.grid import BusKind

logger = logging.getLogger(__name__)


class FaultKind(str, Enum):
    GENERATOR_OUTAGE = "generator_outage"
    MICROGRID_SHUTDOWN = "microgrid_shutdown"
    LINE_TRIP = "line_trip"


@dataclass(frozen=True)
class FaultEvent:
    """A fault applied after the update of step ``at_step``."""

    at_step: int
    kind: FaultKind
    bus: int | None = None
    from_bus: int | None = None
    to_bus: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        if int(self.at_step) != self.at_step or self.at_step < 0:
            raise GameError(f"fault step must be a non-negative integer, got {self.at_step!r}")
        if self.kind is FaultKind.LINE_TRIP:
            if self.from_bus is None or self.to_bus is None or self.bus is not None:
                raise UnknownTarget("line_trip needs from and to buses and no bus")
        elif self.bus is None or self.from_bus is not None or self.to_bus is not None:
            raise UnknownTarget(f"{self.kind.value} needs a bus and no line ends")

    @classmethod
    def generator_outage(cls, step, bus) -> FaultEvent:
        return cls(step, FaultKind.GENERATOR_OUTAGE, bus=bus)

    @classmethod
    def microgrid_shutdown(cls, step, bus) -> FaultEvent:
        return cls(step, FaultKind.MICROGRID_SHUTDOWN, bus=bus)

    @classmethod
    def line_trip(cls, step, a, b) -> FaultEvent:
        return cls(step, FaultKind.LINE_TRIP, from_bus=a, to_bus=b)

    @property
    def target(self) -> tuple:
        if self.kind is FaultKind.LINE_TRIP:
            return ("line", min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))
        return ("bus", self.bus)

    def describe(self) -> str:
        if self.kind is FaultKind.LINE_TRIP:
            where = f"line {self.from_bus}-{self.to_bus}"
        else:
            where = f"bus {self.bus}"
        return f"{self.kind.value} {where} at step {self.at_step}"


@dataclass(frozen=True)
class ScenarioTimeline:
    events: tuple[FaultEvent, ...] = ()

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        steps = [ev.at_step for ev in events]
        if steps != sorted(steps):
            raise GameError("fault events must be sorted by step")
        keys = [(ev.at_step, ev.target) for ev in events]
        if len(set(keys)) != len(keys):
            raise GameError("at most one fault per step and target")

    @classmethod
    def from_events(cls, events: Iterable[FaultEvent]) -> ScenarioTimeline:
        return cls(tuple(sorted(events, key=lambda ev: ev.at_step)))

    def at(self, step) -> tuple[FaultEvent, ...]:
        return tuple(ev for ev in self.events if ev.at_step == step)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)


def _outage(spec: GameSpec, ev: FaultEvent) -> GameSpec:
    try:
        bus = spec.net.bus(ev.bus)
    except UnknownBus:
        raise UnknownTarget(f"generator outage: no bus {ev.bus}") from None
    if bus.kind is not BusKind.GENERATOR:
        raise UnknownTarget(f"generator outage: bus {ev.bus} is a {bus.kind.value} bus")
    return spec.with_network(spec.net.with_bus(dataclasses.replace(bus, p_gen_fixed=0.0)))


def _shutdown(spec: GameSpec, ev: FaultEvent) -> GameSpec:
    if ev.bus not in spec.player_buses:
        raise UnknownTarget(f"microgrid shutdown: bus {ev.bus} is not a player")
    keep = [k for k, b in enumerate(spec.player_buses) if b != ev.bus]
    weights = None
    if spec.team_weights is not None and keep:
        total = sum(spec.team_weights[k] for k in keep)
        weights = tuple(spec.team_weights[k] / total for k in keep)
    return dataclasses.replace(spec, players=tuple(spec.players[k] for k in keep), team_weights=weights)


def _line_trip(spec: GameSpec, ev: FaultEvent) -> GameSpec:
    live = [br for br in spec.net.branches if br.in_service and br.connects(ev.from_bus, ev.to_bus)]
    if not live:
        raise UnknownTarget(f"line trip: no in-service branch between {ev.from_bus} and {ev.to_bus}")
    return spec.with_network(spec.net.with_branch_status(ev.from_bus, ev.to_bus, False))


_HANDLERS = {
    FaultKind.GENERATOR_OUTAGE: _outage,
    FaultKind.MICROGRID_SHUTDOWN: _shutdown,
    FaultKind.LINE_TRIP: _line_trip,
}


def apply_fault(spec: GameSpec, ev: FaultEvent) -> GameSpec:
    """Return the game after ``ev``; the input game is left untouched.

    :raises DisconnectedNetwork: when a line trip islands part of the grid
    :raises UnknownTarget: when the event does not fit the game
    """
    new = _HANDLERS[ev.kind](spec, ev)
    logger.debug("applied %s", ev.describe())
    return new


def apply_faults(spec: GameSpec, events: Iterable[FaultEvent]) -> GameSpec:
    return functools.reduce(apply_fault, events, spec)


def post_fault_equilibrium(spec: GameSpec, events: FaultEvent | Iterable[FaultEvent]) -> Equilibrium:
    if isinstance(events, FaultEvent):
        events = (events,)
    return solve_ne_direct(apply_faults(spec, events))
