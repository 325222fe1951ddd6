"""DC power flow: injections, angles, line flows and slack balance."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from gridgame.errors import DimensionMismatch, UnknownBus
from gridgame.grid import BusKind, Network, SensitivityMatrix


@dataclass(frozen=True, eq=False)
class InjectionVector:
    values: np.ndarray
    bus_order: tuple[int, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.bus_order),):
            raise DimensionMismatch(f"injection shape {values.shape} does not match {len(self.bus_order)} buses")
        if not np.all(np.isfinite(values)):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class AngleProfile:
    values: np.ndarray
    bus_order: tuple[int, ...]

    def angle(self, bus_id) -> float:
        """Angle of a bus in radians; buses outside the order (the slack) sit at 0."""
        try:
            return float(self.values[self.bus_order.index(bus_id)])
        except ValueError:
            return 0.0

    def as_dict(self) -> dict[int, float]:
        return {bus: float(v) for bus, v in zip(self.bus_order, self.values)}


def injections_from_state(net: Network, microgrid_gen: Mapping[int, float]) -> InjectionVector:
    """Net injection P_i = fixed generation + microgrid generation - load for each non-slack bus.

    Buses missing from ``microgrid_gen`` generate nothing beyond their fixed output.
    """
    for bus_id in microgrid_gen:
        if net.bus(bus_id).kind is not BusKind.MICROGRID:
            raise UnknownBus(bus_id, "not a microgrid bus")
    order = net.non_slack_ids
    values = np.empty(len(order))
    for k, bus_id in enumerate(order):
        bus = net.bus(bus_id)
        values[k] = bus.p_gen_fixed + microgrid_gen.get(bus_id, 0.0) - bus.p_load
    return InjectionVector(values=values, bus_order=order)


def solve_angles(s: SensitivityMatrix, p: InjectionVector) -> AngleProfile:
    if s.bus_order != p.bus_order:
        raise DimensionMismatch(f"sensitivity ordering {s.bus_order} does not match injections {p.bus_order}")
    return AngleProfile(values=s.matrix @ p.values, bus_order=s.bus_order)


def line_flows(net: Network, theta: AngleProfile) -> dict[tuple[int, int], float]:
    """Flow B_ij (theta_i - theta_j) on every branch, keyed in both directions."""
    flows = defaultdict(float)
    for br in net.branches:
        flow = br.effective_susceptance * (theta.angle(br.from_bus) - theta.angle(br.to_bus))
        flows[(br.from_bus, br.to_bus)] += flow
        flows[(br.to_bus, br.from_bus)] -= flow
    return dict(flows)


def slack_injection(net: Network, p: InjectionVector) -> float:
    if p.bus_order != net.non_slack_ids:
        raise DimensionMismatch("injection vector does not follow the network bus order")
    return -float(np.sum(p.values))
