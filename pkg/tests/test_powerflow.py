import numpy as np
import pytest

from gridgame.errors import DimensionMismatch, UnknownBus
from gridgame.grid import Branch, Bus, BusKind, Network, SensitivityMatrix, build_reduced_susceptance, build_sensitivity
from gridgame.powerflow import (
    AngleProfile,
    InjectionVector,
    injections_from_state,
    line_flows,
    slack_injection,
    solve_angles,
)

S_2X2 = SensitivityMatrix(matrix=np.array([[0.1, 0.1], [0.1, 0.3]]), bus_order=(1, 2))


def test_injections_from_state():
    net = Network(
        buses=(
            Bus(1, BusKind.GENERATOR, p_gen_fixed=2.8),
            Bus(2, BusKind.SLACK),
            Bus(3, BusKind.MICROGRID, p_load=1.2),
            Bus(4, BusKind.LOAD),
        ),
        branches=(Branch(1, 2, 1.0), Branch(2, 3, 1.0), Branch(3, 4, 1.0)),
    )
    p = injections_from_state(net, {3: 0.551})
    assert p.bus_order == (1, 3, 4)
    np.testing.assert_allclose(p.values, [2.8, -0.649, 0.0])
    assert injections_from_state(net, {}).values[1] == pytest.approx(-1.2)
    with pytest.raises(UnknownBus):
        injections_from_state(net, {4: 0.1})


def test_solve_angles_hand_multiply():
    theta = solve_angles(S_2X2, InjectionVector(np.array([1.0, -1.0]), (1, 2)))
    np.testing.assert_allclose(theta.values, [0.0, -0.2], atol=1e-15)
    assert theta.angle(99) == 0.0
    zero = solve_angles(S_2X2, InjectionVector(np.zeros(2), (1, 2)))
    np.testing.assert_array_equal(zero.values, [0.0, 0.0])


def test_solve_angles_order_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_angles(S_2X2, InjectionVector(np.zeros(2), (2, 1)))
    with pytest.raises(DimensionMismatch):
        InjectionVector(np.zeros(3), (1, 2))


def test_injection_must_be_finite():
    with pytest.raises(ValueError):
        InjectionVector(np.array([np.nan, 0.0]), (1, 2))


def test_line_flow_direct_formula():
    net = Network(
        buses=(Bus(1, BusKind.LOAD), Bus(2, BusKind.LOAD), Bus(3, BusKind.SLACK)),
        branches=(Branch(1, 2, 5.0), Branch(2, 3, 1.0), Branch(1, 3, 2.0, in_service=False)),
    )
    flows = line_flows(net, AngleProfile(np.array([0.1, 0.06]), (1, 2)))
    assert flows[(1, 2)] == pytest.approx(0.2)
    assert flows[(2, 1)] == pytest.approx(-0.2)
    assert flows[(1, 3)] == 0.0
    assert flows[(2, 3)] == pytest.approx(0.06)


def test_slack_injection():
    assert slack_injection(
        Network(buses=(Bus(1, BusKind.LOAD), Bus(2, BusKind.LOAD), Bus(3, BusKind.SLACK)), branches=()),
        InjectionVector(np.array([1.0, -1.0]), (1, 2)),
    ) == 0.0
    net = Network(buses=(Bus(1, BusKind.GENERATOR, p_gen_fixed=2.8), Bus(2, BusKind.SLACK)), branches=())
    assert slack_injection(net, InjectionVector(np.array([2.8]), (1,))) == pytest.approx(-2.8)


def test_nodal_balance_on_random_networks(random_network, rng):
    for _ in range(100):
        net = random_network(rng, int(rng.integers(4, 15)))
        rb = build_reduced_susceptance(net)
        s = build_sensitivity(rb)
        p = InjectionVector(rng.normal(size=len(s.bus_order)), s.bus_order)
        theta = solve_angles(s, p)
        np.testing.assert_allclose(rb.matrix @ theta.values, p.values, atol=1e-9)

        flows = line_flows(net, theta)
        injection = dict(zip(p.bus_order, p.values))
        injection[net.slack.id] = slack_injection(net, p)
        for bus in net.buses:
            out = sum(f for (a, _), f in flows.items() if a == bus.id)
            assert out == pytest.approx(injection[bus.id], abs=1e-9)
        assert sum(injection.values()) == pytest.approx(0.0, abs=1e-12)


def test_angles_are_linear_in_injections(random_network, rng):
    net = random_network(rng, 10)
    s = build_sensitivity(build_reduced_susceptance(net))
    p1, p2 = rng.normal(size=(2, len(s.bus_order)))
    combined = solve_angles(s, InjectionVector(2.0 * p1 - 3.0 * p2, s.bus_order)).values
    separate = 2.0 * solve_angles(s, InjectionVector(p1, s.bus_order)).values - 3.0 * solve_angles(
        s, InjectionVector(p2, s.bus_order)
    ).values
    np.testing.assert_allclose(combined, separate, atol=1e-10)
