from pathlib import Path

import numpy as np
import pytest

from gridgame.dynamics import SchemeConfig, check_conditions
from gridgame.game import GameSpec, Market, PlayerParams, PriceBasis
from gridgame.grid import Branch, Bus, BusKind, Network
from gridgame.scenario import fixture_path, load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def load_example(name):
    return load_scenario(SCENARIOS / name)


def build_three_bus(team_weights=(0.5, 0.5), cap=1000.0):
    """Slack 3 feeds microgrid 1 (b=10), which feeds microgrid 2 (b=5, 10 pu load)."""
    net = Network(
        buses=(
            Bus(1, BusKind.MICROGRID, p_load=0.0),
            Bus(2, BusKind.MICROGRID, p_load=10.0),
            Bus(3, BusKind.SLACK),
        ),
        branches=(Branch(3, 1, 10.0), Branch(1, 2, 5.0)),
    )
    players = [
        PlayerParams(bus=1, psi=120.0, eta=10.0, p_load=0.0, p_gen_max=cap),
        PlayerParams(bus=2, psi=120.0, eta=10.0, p_load=10.0, p_gen_max=cap),
    ]
    return GameSpec.build(net, players, Market(zeta=140.0, price_basis=PriceBasis.PU), team_weights)


def build_random_network(rng, n_buses, chord_prob=0.3, b_range=(0.5, 20.0), kinds=None):
    """Random tree over buses 1..n plus random chords; the last bus is the slack."""
    kinds = kinds or {}
    edges = set()
    for k in range(2, n_buses + 1):
        parent = int(rng.integers(1, k))
        edges.add((parent, k))
    for a in range(1, n_buses + 1):
        for b in range(a + 1, n_buses + 1):
            if (a, b) not in edges and rng.random() < chord_prob / n_buses:
                edges.add((a, b))
    branches = tuple(Branch(a, b, float(rng.uniform(*b_range))) for a, b in sorted(edges))
    buses = []
    for bus_id in range(1, n_buses + 1):
        if bus_id == n_buses:
            buses.append(Bus(bus_id, BusKind.SLACK))
            continue
        kind = kinds.get(bus_id, BusKind.LOAD)
        if kind is BusKind.GENERATOR:
            buses.append(Bus(bus_id, kind, p_gen_fixed=float(rng.uniform(0.0, 2.0))))
        else:
            buses.append(Bus(bus_id, kind, p_load=float(rng.uniform(0.0, 1.0))))
    return Network(buses=tuple(buses), branches=branches)


def build_random_spec(rng, n_buses=8, n_players=3, with_weights=True):
    """Random game in the per-unit price basis with a mix of interior and clamped players."""
    players_at = sorted(int(b) for b in rng.choice(np.arange(1, n_buses), size=n_players, replace=False))
    kinds = {b: BusKind.MICROGRID for b in players_at}
    for b in range(1, n_buses):
        if b not in kinds and rng.random() < 0.3:
            kinds[b] = BusKind.GENERATOR
    net = build_random_network(rng, n_buses, chord_prob=1.5, b_range=(2.0, 20.0), kinds=kinds)
    players = [
        PlayerParams(
            bus=b,
            psi=float(rng.uniform(0.5, 2.5)),
            eta=float(rng.uniform(10.0, 30.0)),
            p_load=net.bus(b).p_load,
            p_gen_max=float(rng.uniform(0.5, 3.0)),
        )
        for b in players_at
    ]
    weights = None
    if with_weights:
        raw = rng.uniform(0.5, 1.5, size=n_players)
        weights = tuple(raw / raw.sum())
    return GameSpec.build(net, players, Market(zeta=2.0, price_basis=PriceBasis.PU), weights)


def condition_satisfying_specs(rng, count, **kwargs):
    specs = []
    while len(specs) < count:
        spec = build_random_spec(rng, **kwargs)
        if check_conditions(spec, SchemeConfig("iua")).iua_condition_met:
            specs.append(spec)
    return specs


@pytest.fixture
def three_bus():
    return build_three_bus()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ieee14():
    return load_scenario(fixture_path("ieee14.json"))


@pytest.fixture
def random_spec():
    return build_random_spec


@pytest.fixture
def random_network():
    return build_random_network


@pytest.fixture
def stable_specs():
    return condition_satisfying_specs
