"""Network data model, reduced susceptance and sensitivity matrices."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum

import networkx as nx
import numpy as np
from scipy import linalg

from gridgame import config
from gridgame.errors import (
    DisconnectedNetwork,
    DuplicateBus,
    NetworkError,
    SingularMatrix,
    UnknownBus,
)

logger = logging.getLogger(__name__)


class BusKind(str, Enum):
    SLACK = "slack"
    GENERATOR = "generator"
    LOAD = "load"
    MICROGRID = "microgrid"


@dataclass(frozen=True)
class Bus:
    """A bus with its fixed load and fixed generation in per-unit."""

    id: int
    kind: BusKind
    p_load: float = 0.0
    p_gen_fixed: float = 0.0

    def __post_init__(self):
        if int(self.id) != self.id or self.id <= 0:
            raise NetworkError(f"bus id must be a positive integer, got {self.id!r}")
        object.__setattr__(self, "kind", BusKind(self.kind))
        if self.p_load < 0 or self.p_gen_fixed < 0:
            raise NetworkError(f"bus {self.id}: load and generation must be non-negative")
        if self.kind in (BusKind.LOAD, BusKind.MICROGRID, BusKind.SLACK) and self.p_gen_fixed != 0:
            raise NetworkError(f"bus {self.id}: only generator buses carry fixed generation")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    susceptance: float
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus} connects a bus to itself")
        if not self.susceptance > 0:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus}: susceptance must be positive")

    def connects(self, a, b):
        return {self.from_bus, self.to_bus} == {a, b}

    @property
    def effective_susceptance(self):
        return self.susceptance if self.in_service else 0.0


@dataclass(frozen=True)
class Network:
    """Buses, branches and the power base; immutable once built."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = config.BASE_MVA

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        seen = set()
        for bus in self.buses:
            if bus.id in seen:
                raise DuplicateBus(bus.id)
            seen.add(bus.id)
        slacks = [bus for bus in self.buses if bus.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise NetworkError(f"exactly one slack bus required, found {len(slacks)}")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in seen:
                    raise UnknownBus(end, f"referenced by branch {br.from_bus}-{br.to_bus}")
        if not self.base_mva > 0:
            raise NetworkError("base_mva must be positive")

    @property
    def slack(self) -> Bus:
        return next(bus for bus in self.buses if bus.kind is BusKind.SLACK)

    def bus(self, bus_id) -> Bus:
        for bus in self.buses:
            if bus.id == bus_id:
                return bus
        raise UnknownBus(bus_id)

    @property
    def non_slack_ids(self) -> tuple[int, ...]:
        return tuple(sorted(bus.id for bus in self.buses if bus.kind is not BusKind.SLACK))

    @property
    def microgrid_ids(self) -> tuple[int, ...]:
        return tuple(sorted(bus.id for bus in self.buses if bus.kind is BusKind.MICROGRID))

    @property
    def generator_ids(self) -> tuple[int, ...]:
        return tuple(sorted(bus.id for bus in self.buses if bus.kind is BusKind.GENERATOR))

    def graph(self) -> nx.Graph:
        """Graph of all buses joined by their in-service branches."""
        g = nx.Graph()
        g.add_nodes_from(bus.id for bus in self.buses)
        g.add_edges_from((br.from_bus, br.to_bus) for br in self.branches if br.in_service)
        return g

    def islands(self) -> list[set[int]]:
        """Bus sets that have no in-service path to the slack."""
        slack = self.slack.id
        return [comp for comp in nx.connected_components(self.graph()) if slack not in comp]

    def with_bus(self, bus: Bus) -> Network:
        self.bus(bus.id)
        buses = tuple(bus if b.id == bus.id else b for b in self.buses)
        return dataclasses.replace(self, buses=buses)

    def with_branch_status(self, a, b, in_service) -> Network:
        branches = tuple(
            dataclasses.replace(br, in_service=in_service) if br.connects(a, b) else br
            for br in self.branches
        )
        return dataclasses.replace(self, branches=branches)


@dataclass(frozen=True, eq=False)
class ReducedSusceptance:
    """Reduced Laplacian (-B) over the non-slack buses."""

    matrix: np.ndarray
    bus_order: tuple[int, ...]

    def __eq__(self, other):
        if not isinstance(other, ReducedSusceptance):
            return NotImplemented
        return self.bus_order == other.bus_order and np.array_equal(self.matrix, other.matrix)


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """S = -B^-1, mapping non-slack injections to angles."""

    matrix: np.ndarray
    bus_order: tuple[int, ...]

    def __eq__(self, other):
        if not isinstance(other, SensitivityMatrix):
            return NotImplemented
        return self.bus_order == other.bus_order and np.array_equal(self.matrix, other.matrix)

    def index_of(self, bus_id) -> int:
        try:
            return self.bus_order.index(bus_id)
        except ValueError:
            raise UnknownBus(bus_id, "not a non-slack bus of this matrix") from None

    def submatrix(self, buses) -> np.ndarray:
        idx = [self.index_of(b) for b in buses]
        return self.matrix[np.ix_(idx, idx)]


@dataclass(frozen=True)
class SensitivityViolation:
    entry: tuple[int, int]
    prop: str
    value: float


def build_reduced_susceptance(net: Network) -> ReducedSusceptance:
    """Assemble the reduced Laplacian of the in-service network.

    :param net: network to assemble
    :return: matrix over the non-slack buses in ascending id order
    :raises DisconnectedNetwork: if some bus has no in-service path to the slack
    """
    islands = net.islands()
    if islands:
        raise DisconnectedNetwork(islands)

    order = net.non_slack_ids
    pos = {bus_id: k for k, bus_id in enumerate(order)}
    lap = np.zeros((len(order), len(order)))
    for br in net.branches:
        if not br.in_service:
            continue
        b = br.susceptance
        i = pos.get(br.from_bus)
        j = pos.get(br.to_bus)
        if i is not None:
            lap[i, i] += b
        if j is not None:
            lap[j, j] += b
        if i is not None and j is not None:
            lap[i, j] -= b
            lap[j, i] -= b
    return ReducedSusceptance(matrix=lap, bus_order=order)


def build_sensitivity(rb: ReducedSusceptance) -> SensitivityMatrix:
    """Invert the reduced Laplacian by Cholesky solves against the identity."""
    n = len(rb.bus_order)
    if n == 0:
        return SensitivityMatrix(matrix=np.zeros((0, 0)), bus_order=())
    try:
        factor = linalg.cho_factor(rb.matrix, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularMatrix(f"reduced susceptance is not positive definite: {exc}") from exc
    s = linalg.cho_solve(factor, np.eye(n))
    s = 0.5 * (s + s.T)
    residual = np.max(np.abs(s @ rb.matrix - np.eye(n)))
    if not np.isfinite(residual) or residual > config.INVERSE_ATOL:
        raise SingularMatrix(f"sensitivity inverse residual {residual:.3e} exceeds {config.INVERSE_ATOL}")
    logger.debug("sensitivity matrix built for %d buses, inverse residual %.2e", n, residual)
    return SensitivityMatrix(matrix=s, bus_order=rb.bus_order)


def validate_sensitivity(s: SensitivityMatrix) -> list[SensitivityViolation]:
    """Check symmetry, nonnegativity and positive diagonal of S."""
    m = s.matrix
    order = s.bus_order
    violations = []
    if m.size == 0:
        return violations
    sym_tol = config.SYMMETRY_RTOL * np.max(np.abs(m))
    for i in range(len(order)):
        if not m[i, i] > 0:
            violations.append(SensitivityViolation((order[i], order[i]), "positive_diagonal", float(m[i, i])))
        for j in range(i, len(order)):
            if j > i and abs(m[i, j] - m[j, i]) > sym_tol:
                violations.append(SensitivityViolation((order[i], order[j]), "symmetry", float(m[i, j] - m[j, i])))
            if m[i, j] < -config.NONNEG_ATOL or (j > i and m[j, i] < -config.NONNEG_ATOL):
                worst = float(min(m[i, j], m[j, i]))
                violations.append(SensitivityViolation((order[i], order[j]), "nonnegativity", worst))
    return violations
