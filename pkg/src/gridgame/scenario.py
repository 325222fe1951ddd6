"""Scenario files: JSON in MW at the interface, validated domain objects in per-unit inside."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from gridgame import config
from gridgame.dynamics import Scheme, SchemeConfig
from gridgame.errors import (
    GridGameError,
    NetworkError,
    ParseError,
    SingularMatrix,
    UnknownBus,
    ValidationError,
)
from gridgame.faults import FaultEvent, FaultKind, ScenarioTimeline, apply_fault
from gridgame.game import GameSpec, Market, PlayerParams, PriceBasis, calibrate_generator
from gridgame.grid import Branch, Bus, BusKind, Network

logger = logging.getLogger(__name__)

TOP_REQUIRED = ("base_mva", "buses", "branches", "slack", "market", "players", "algorithm")
TOP_OPTIONAL = ("name", "team_weights", "faults", "calibration")


class Scenario(NamedTuple):
    spec: GameSpec
    config: SchemeConfig
    timeline: ScenarioTimeline
    name: str = "scenario"


def _join(path, key):
    return f"{path}.{key}" if path else key


def _object(value, path, required, optional=()):
    if not isinstance(value, dict):
        raise ValidationError(path or "$", "expected an object")
    for key in value:
        if key not in required and key not in optional:
            raise ValidationError(_join(path, key), "unknown key")
    for key in required:
        if key not in value:
            raise ValidationError(_join(path, key), "missing required key")
    return value


def _list(value, path, allow_empty=True):
    if not isinstance(value, list):
        raise ValidationError(path, "expected a list")
    if not allow_empty and not value:
        raise ValidationError(path, "must not be empty")
    return value


def _number(value, path, positive=False, nonneg=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(path, f"expected a finite number, got {value!r}")
    if positive and not value > 0:
        raise ValidationError(path, "must be positive")
    if nonneg and value < 0:
        raise ValidationError(path, "must be non-negative")
    return float(value)


def _integer(value, path, nonneg=False) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(path, f"expected an integer, got {value!r}")
    if nonneg and value < 0:
        raise ValidationError(path, "must be non-negative")
    return value


def _string(value, path) -> str:
    if not isinstance(value, str):
        raise ValidationError(path, f"expected a string, got {value!r}")
    return value


def _choice(value, path, enum):
    choices = [e.value for e in enum]
    if value not in choices:
        raise ValidationError(path, f"expected one of {choices}, got {value!r}")
    return enum(value)


def _network(doc, base) -> Network:
    buses = []
    for k, raw in enumerate(_list(doc["buses"], "buses", allow_empty=False)):
        path = f"buses[{k}]"
        _object(raw, path, ("id", "kind"), ("p_load_mw", "p_gen_mw"))
        try:
            buses.append(
                Bus(
                    id=_integer(raw["id"], f"{path}.id"),
                    kind=_choice(raw["kind"], f"{path}.kind", BusKind),
                    p_load=_number(raw.get("p_load_mw", 0.0), f"{path}.p_load_mw", nonneg=True) / base,
                    p_gen_fixed=_number(raw.get("p_gen_mw", 0.0), f"{path}.p_gen_mw", nonneg=True) / base,
                )
            )
        except GridGameError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(path, str(exc)) from exc

    branches = []
    for k, raw in enumerate(_list(doc["branches"], "branches")):
        path = f"branches[{k}]"
        _object(raw, path, ("from", "to", "x_pu"))
        a = _integer(raw["from"], f"{path}.from")
        b = _integer(raw["to"], f"{path}.to")
        x = _number(raw["x_pu"], f"{path}.x_pu", positive=True)
        try:
            branches.append(Branch(a, b, 1.0 / x))
        except GridGameError as exc:
            raise ValidationError(path, str(exc)) from exc

    slack = _integer(doc["slack"], "slack")
    declared = [bus.id for bus in buses if bus.kind is BusKind.SLACK]
    if declared != [slack]:
        raise ValidationError("slack", f"bus {slack} must be the only bus of kind slack, found {declared}")
    try:
        return Network(buses=tuple(buses), branches=tuple(branches), base_mva=base)
    except UnknownBus as exc:
        raise ValidationError("branches", str(exc)) from exc
    except GridGameError as exc:
        raise ValidationError("buses", str(exc)) from exc


def _players(doc, net, base) -> list[PlayerParams]:
    players = []
    for k, raw in enumerate(_list(doc["players"], "players")):
        path = f"players[{k}]"
        _object(raw, path, ("bus", "psi", "eta", "p_gen_max_mw"))
        bus_id = _integer(raw["bus"], f"{path}.bus")
        if bus_id not in net.microgrid_ids:
            raise ValidationError(f"{path}.bus", f"bus {bus_id} is not a microgrid bus")
        try:
            players.append(
                PlayerParams(
                    bus=bus_id,
                    psi=_number(raw["psi"], f"{path}.psi"),
                    eta=_number(raw["eta"], f"{path}.eta", positive=True),
                    p_load=net.bus(bus_id).p_load,
                    p_gen_max=_number(raw["p_gen_max_mw"], f"{path}.p_gen_max_mw", nonneg=True) / base,
                )
            )
        except GridGameError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(path, str(exc)) from exc
    return players


def _market(raw) -> Market:
    _object(raw, "market", ("zeta",), ("price_basis",))
    basis = _choice(raw.get("price_basis", PriceBasis.MW.value), "market.price_basis", PriceBasis)
    return Market(zeta=_number(raw["zeta"], "market.zeta"), price_basis=basis)


def _calibrate(raw, spec: GameSpec, base) -> GameSpec:
    _object(raw, "calibration", ("bus", "target_p_gen_mw"))
    bus_id = _integer(raw["bus"], "calibration.bus")
    if bus_id not in spec.net.generator_ids:
        raise ValidationError("calibration.bus", f"bus {bus_id} is not a generator bus")
    targets = _list(raw["target_p_gen_mw"], "calibration.target_p_gen_mw")
    if len(targets) != spec.n_players:
        raise ValidationError("calibration.target_p_gen_mw", f"{len(targets)} targets for {spec.n_players} players")
    target = [_number(t, f"calibration.target_p_gen_mw[{k}]", nonneg=True) / base for k, t in enumerate(targets)]
    try:
        value = calibrate_generator(spec, bus_id, target)
    except (GridGameError, ArithmeticError) as exc:
        raise ValidationError("calibration", str(exc)) from exc
    if value < 0:
        logger.warning("calibrated output of bus %d is negative (%.3f MW), clamped to 0", bus_id, value * base)
        value = 0.0
    bus = spec.net.bus(bus_id)
    return spec.with_network(spec.net.with_bus(dataclasses.replace(bus, p_gen_fixed=value)))


def _algorithm(raw, n_players, base) -> SchemeConfig:
    _object(raw, "algorithm", ("scheme",), ("tau", "delta_mw", "max_steps", "seed"))
    scheme = _choice(raw["scheme"], "algorithm.scheme", Scheme)
    tau = None
    if scheme is Scheme.IUA:
        if "tau" in raw:
            raise ValidationError("algorithm.tau", "update probabilities have no meaning for iua")
    else:
        if "tau" not in raw:
            raise ValidationError("algorithm.tau", f"required for {scheme.value}")
        values = _list(raw["tau"], "algorithm.tau")
        if len(values) != n_players:
            raise ValidationError("algorithm.tau", f"{len(values)} values for {n_players} players")
        tau = tuple(_number(t, f"algorithm.tau[{k}]") for k, t in enumerate(values))
        for k, t in enumerate(tau):
            if not 0 < t < 1:
                raise ValidationError(f"algorithm.tau[{k}]", "must lie in (0, 1)")
    delta = _number(raw.get("delta_mw", config.DEFAULT_DELTA_PU * base), "algorithm.delta_mw", positive=True) / base
    max_steps = _integer(raw.get("max_steps", config.DEFAULT_MAX_STEPS), "algorithm.max_steps", nonneg=True)
    seed = _integer(raw.get("seed", config.DEFAULT_SEED), "algorithm.seed", nonneg=True)
    if seed >= 2**64:
        raise ValidationError("algorithm.seed", "must fit in 64 bits")
    return SchemeConfig(scheme=scheme, tau=tau, delta=delta, max_steps=max_steps, seed=seed)


_FAULT_KEYS = {
    FaultKind.GENERATOR_OUTAGE: ("bus",),
    FaultKind.MICROGRID_SHUTDOWN: ("bus",),
    FaultKind.LINE_TRIP: ("from", "to"),
}


def _timeline(raw, spec: GameSpec) -> ScenarioTimeline:
    events = []
    for k, item in enumerate(_list(raw, "faults")):
        path = f"faults[{k}]"
        if not isinstance(item, dict):
            raise ValidationError(path, "expected an object")
        kind = _choice(item.get("kind"), f"{path}.kind", FaultKind)
        _object(item, path, ("at_step", "kind") + _FAULT_KEYS[kind])
        step = _integer(item["at_step"], f"{path}.at_step", nonneg=True)
        if kind is FaultKind.LINE_TRIP:
            ev = FaultEvent.line_trip(step, _integer(item["from"], f"{path}.from"), _integer(item["to"], f"{path}.to"))
        else:
            ev = FaultEvent(step, kind, bus=_integer(item["bus"], f"{path}.bus"))
        events.append((k, ev))

    ordered = sorted(events, key=lambda pair: pair[1].at_step)
    try:
        timeline = ScenarioTimeline(tuple(ev for _, ev in ordered))
    except GridGameError as exc:
        raise ValidationError("faults", str(exc)) from exc
    current = spec
    for k, ev in ordered:
        try:
            current = apply_fault(current, ev)
        except GridGameError as exc:
            raise ValidationError(f"faults[{k}]", str(exc)) from exc
    return timeline


def parse_scenario(doc, source="<scenario>") -> Scenario:
    """Validate a decoded scenario document and build the domain objects."""
    _object(doc, "", TOP_REQUIRED, TOP_OPTIONAL)
    base = _number(doc["base_mva"], "base_mva", positive=True)
    name = _string(doc.get("name", Path(str(source)).stem), "name")
    net = _network(doc, base)
    players = _players(doc, net, base)
    market = _market(doc["market"])
    weights = None
    if "team_weights" in doc:
        weights = [_number(a, f"team_weights[{k}]") for k, a in enumerate(_list(doc["team_weights"], "team_weights"))]
        if len(weights) != len(players):
            raise ValidationError("team_weights", f"{len(weights)} weights for {len(players)} players")
        if any(not 0 < a <= 1 for a in weights):
            raise ValidationError("team_weights", "weights must lie in (0, 1]")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValidationError("team_weights", f"weights must sum to 1, got {sum(weights)!r}")
    try:
        spec = GameSpec.build(net, players, market, weights)
    except (NetworkError, SingularMatrix) as exc:
        raise ValidationError("branches", str(exc)) from exc
    except GridGameError as exc:
        raise ValidationError("players", str(exc)) from exc
    if "calibration" in doc:
        spec = _calibrate(doc["calibration"], spec, base)
    cfg = _algorithm(doc["algorithm"], spec.n_players, base)
    timeline = _timeline(doc.get("faults", []), spec)
    logger.debug("scenario %s: %d buses, %d players, %d faults", name, len(net.buses), spec.n_players, len(timeline))
    return Scenario(spec=spec, config=cfg, timeline=timeline, name=name)


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file.

    :param path: JSON scenario file
    :return: validated ``Scenario``
    :raises ParseError: on malformed JSON, with line and column
    :raises ValidationError: naming the path of the offending value
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), exc.lineno, exc.colno, exc.msg) from exc
    return parse_scenario(doc, source=path)


def fixture_path(name) -> Path:
    """Path of a scenario shipped with the package, e.g. ``ieee14.json``."""
    return Path(str(resources.files("gridgame") / "data" / name))


def resolve_scenario_path(arg) -> Path:
    """A file path as given, falling back to the packaged fixtures by name."""
    path = Path(arg)
    if path.exists():
        return path
    packaged = fixture_path(path.name)
    return packaged if packaged.exists() else path


def dump_scenario(scenario: Scenario) -> dict:
    """Scenario as a file document (MW units, calibration resolved)."""
    spec, cfg, timeline, name = scenario
    base = spec.net.base_mva
    doc = {
        "name": name,
        "base_mva": base,
        "slack": spec.net.slack.id,
        "buses": [],
        "branches": [],
    }
    for bus in spec.net.buses:
        entry = {"id": bus.id, "kind": bus.kind.value, "p_load_mw": bus.p_load * base}
        if bus.kind is BusKind.GENERATOR:
            entry["p_gen_mw"] = bus.p_gen_fixed * base
        doc["buses"].append(entry)
    for br in spec.net.branches:
        if br.in_service:
            doc["branches"].append({"from": br.from_bus, "to": br.to_bus, "x_pu": 1.0 / br.susceptance})
    doc["market"] = {"zeta": spec.market.zeta, "price_basis": spec.market.price_basis.value}
    doc["players"] = [
        {"bus": pl.bus, "psi": pl.psi, "eta": pl.eta, "p_gen_max_mw": pl.p_gen_max * base} for pl in spec.players
    ]
    if spec.team_weights is not None:
        doc["team_weights"] = list(spec.team_weights)
    algorithm = {"scheme": cfg.scheme.value}
    if cfg.tau is not None:
        algorithm["tau"] = list(cfg.tau)
    algorithm.update(delta_mw=cfg.delta * base, max_steps=cfg.max_steps, seed=cfg.seed)
    doc["algorithm"] = algorithm
    faults = []
    for ev in timeline:
        item = {"at_step": ev.at_step, "kind": ev.kind.value}
        if ev.kind is FaultKind.LINE_TRIP:
            item.update({"from": ev.from_bus, "to": ev.to_bus})
        else:
            item["bus"] = ev.bus
        faults.append(item)
    doc["faults"] = faults
    return doc
