"""Player economics, best response, Nash equilibrium and team problem.

Powers are per-unit on the network base.  The $-terms of a player's cost read
power in the unit named by ``Market.price_basis`` (MW by default), which is why
every quantity that mixes prices and angles goes through ``energy_scale``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from gridgame import config
from gridgame.errors import (
    DimensionMismatch,
    GameError,
    MaxIterationsExceeded,
    NoConvergentActiveSet,
    SingularReducedSystem,
)
from gridgame.grid import (
    BusKind,
    Network,
    SensitivityMatrix,
    build_reduced_susceptance,
    build_sensitivity,
)
from gridgame.powerflow import AngleProfile, InjectionVector, injections_from_state, solve_angles

logger = logging.getLogger(__name__)

# Distance (per-unit) below which a player counts as sitting on its bound
ACTIVE_TOL = 1e-12


class PriceBasis(str, Enum):
    MW = "mw"
    PU = "pu"


class ActiveStatus(str, Enum):
    INNER = "inner"
    AT_ZERO_GEN = "at_zero_gen"
    AT_CAPACITY = "at_capacity"


@dataclass(frozen=True)
class Market:
    zeta: float
    price_basis: PriceBasis = PriceBasis.MW

    def __post_init__(self):
        if not math.isfinite(self.zeta):
            raise GameError("market price zeta must be finite")
        object.__setattr__(self, "price_basis", PriceBasis(self.price_basis))

    def energy_scale(self, base_mva) -> float:
        """Factor turning per-unit power into the unit the prices are quoted in."""
        return float(base_mva) if self.price_basis is PriceBasis.MW else 1.0


@dataclass(frozen=True)
class PlayerParams:
    """Economics of one microgrid; loads and capacity in per-unit."""

    bus: int
    psi: float
    eta: float
    p_load: float
    p_gen_max: float

    def __post_init__(self):
        if not self.eta > 0:
            raise GameError(f"player {self.bus}: eta must be positive")
        if self.p_load < 0 or self.p_gen_max < 0:
            raise GameError(f"player {self.bus}: load and capacity must be non-negative")


@dataclass(frozen=True)
class GameSpec:
    net: Network
    s: SensitivityMatrix
    players: tuple[PlayerParams, ...]
    market: Market
    team_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "players", tuple(self.players))
        if self.team_weights is not None:
            object.__setattr__(self, "team_weights", tuple(float(a) for a in self.team_weights))
        if self.s.bus_order != self.net.non_slack_ids:
            raise DimensionMismatch("sensitivity matrix does not follow the network's non-slack buses")
        buses = [pl.bus for pl in self.players]
        if len(set(buses)) != len(buses):
            raise GameError(f"player buses must be distinct, got {buses}")
        for pl in self.players:
            bus = self.net.bus(pl.bus)
            if bus.kind is not BusKind.MICROGRID:
                raise GameError(f"player bus {pl.bus} is a {bus.kind.value} bus, not a microgrid")
            if not math.isclose(bus.p_load, pl.p_load, rel_tol=1e-12, abs_tol=1e-12):
                raise GameError(f"player {pl.bus}: load {pl.p_load} differs from bus load {bus.p_load}")
        weights = self.team_weights
        if weights is not None:
            if len(weights) != len(self.players):
                raise GameError(f"{len(weights)} team weights for {len(self.players)} players")
            if any(not 0 < a <= 1 for a in weights):
                raise GameError("team weights must lie in (0, 1]")
            if abs(sum(weights) - 1.0) > 1e-9:
                raise GameError(f"team weights must sum to 1, got {sum(weights)!r}")

    @classmethod
    def build(cls, net, players, market, team_weights=None) -> GameSpec:
        s = build_sensitivity(build_reduced_susceptance(net))
        return cls(net=net, s=s, players=tuple(players), market=market, team_weights=team_weights)

    def with_network(self, net: Network) -> GameSpec:
        """Same game on a changed network; S is rebuilt only if the topology changed."""
        if net.branches == self.net.branches:
            return dataclasses.replace(self, net=net)
        s = build_sensitivity(build_reduced_susceptance(net))
        return dataclasses.replace(self, net=net, s=s)

    @property
    def player_buses(self) -> tuple[int, ...]:
        return tuple(pl.bus for pl in self.players)

    @property
    def player_indices(self) -> tuple[int, ...]:
        """Positions of the player buses in the sensitivity ordering."""
        return tuple(self.s.index_of(b) for b in self.player_buses)

    @property
    def n_players(self) -> int:
        return len(self.players)

    def player_index(self, bus) -> int:
        try:
            return self.player_buses.index(bus)
        except ValueError:
            raise GameError(f"bus {bus} is not a player") from None


@dataclass(frozen=True)
class PlayerDerived:
    gamma: float
    s_ii: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if not self.s_ii > 0:
            raise GameError("own sensitivity s_ii must be positive")
        if self.p_min > self.p_max:
            raise GameError("p_min exceeds p_max")


@dataclass(frozen=True, eq=False)
class GameArrays:
    """Per-player vectors of a spec, in player order."""

    idx: np.ndarray
    s_ii: np.ndarray
    gamma: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    p_load: np.ndarray
    fixed: np.ndarray
    c: np.ndarray
    s_dd: np.ndarray


@dataclass(frozen=True, eq=False)
class Equilibrium:
    buses: tuple[int, ...]
    p_net: np.ndarray
    p_gen: np.ndarray
    angles: AngleProfile
    active_set: tuple[ActiveStatus, ...]

    @property
    def player_angles(self) -> np.ndarray:
        return np.array([self.angles.angle(b) for b in self.buses])

    def p_gen_of(self, bus) -> float:
        return float(self.p_gen[self.buses.index(bus)])

    def p_gen_dict(self) -> dict[int, float]:
        return {b: float(g) for b, g in zip(self.buses, self.p_gen)}


def derive_player(spec: GameSpec, i: int) -> PlayerDerived:
    pl = spec.players[i]
    k = spec.s.index_of(pl.bus)
    s_ii = float(spec.s.matrix[k, k])
    scale = spec.market.energy_scale(spec.net.base_mva)
    gamma = scale * (spec.market.zeta - pl.psi) / (pl.eta**2 * s_ii)
    return PlayerDerived(gamma=gamma, s_ii=s_ii, p_min=-pl.p_load, p_max=pl.p_gen_max - pl.p_load)


def fixed_injection(spec: GameSpec) -> np.ndarray:
    """Injection of every non-slack bus with the players' rows zeroed."""
    values = injections_from_state(spec.net, {}).values.copy()
    values[list(spec.player_indices)] = 0.0
    return values


def game_arrays(spec: GameSpec) -> GameArrays:
    derived = [derive_player(spec, i) for i in range(spec.n_players)]
    idx = np.array(spec.player_indices, dtype=int)
    fixed = fixed_injection(spec)
    return GameArrays(
        idx=idx,
        s_ii=np.array([d.s_ii for d in derived]),
        gamma=np.array([d.gamma for d in derived]),
        p_min=np.array([d.p_min for d in derived]),
        p_max=np.array([d.p_max for d in derived]),
        p_load=np.array([pl.p_load for pl in spec.players]),
        fixed=fixed,
        c=spec.s.matrix[idx] @ fixed,
        s_dd=spec.s.matrix[np.ix_(idx, idx)],
    )


def full_injection(spec: GameSpec, p_net, arrays: GameArrays | None = None) -> InjectionVector:
    arrays = arrays if arrays is not None else game_arrays(spec)
    values = arrays.fixed.copy()
    values[arrays.idx] = np.asarray(p_net, dtype=float)
    return InjectionVector(values=values, bus_order=spec.s.bus_order)


def other_aggregates(spec: GameSpec, p_net, arrays: GameArrays | None = None) -> np.ndarray:
    """g_bar_{-i} for every player, read as theta_i - s_ii P_i from theta = S P."""
    arrays = arrays if arrays is not None else game_arrays(spec)
    p_net = np.asarray(p_net, dtype=float)
    theta = spec.s.matrix @ full_injection(spec, p_net, arrays).values
    return theta[arrays.idx] - arrays.s_ii * p_net


def best_response(d: PlayerDerived, g_bar_minus_i: float) -> float:
    """Clamped best response of one player to the aggregate of everybody else."""
    return min(d.p_max, max(d.p_min, (d.gamma - g_bar_minus_i) / d.s_ii))


def best_responses(arrays: GameArrays, aggregates) -> np.ndarray:
    return np.minimum(arrays.p_max, np.maximum(arrays.p_min, (arrays.gamma - aggregates) / arrays.s_ii))


def cost(spec: GameSpec, i: int, p_gen_i, theta_i):
    """Cost U_i in $/h for generation p_gen_i (per-unit) at angle theta_i (rad)."""
    pl = spec.players[i]
    scale = spec.market.energy_scale(spec.net.base_mva)
    zeta = spec.market.zeta
    return scale * (pl.psi * p_gen_i + zeta * (pl.p_load - p_gen_i)) + 0.5 * pl.eta**2 * theta_i**2


def reduced_cost(spec: GameSpec, i: int, p_gen_i, p_net):
    """Cost with the angle eliminated through theta_i = s_ii P_i + g_bar_{-i}.

    ``p_net`` holds the net injections of all players; entry ``i`` is ignored.
    ``p_gen_i`` may be an array of candidate generations.
    """
    arrays = game_arrays(spec)
    g_bar = other_aggregates(spec, p_net, arrays)[i]
    theta = arrays.s_ii[i] * (np.asarray(p_gen_i, dtype=float) - arrays.p_load[i]) + g_bar
    return cost(spec, i, p_gen_i, theta)


def _classify(p, arrays: GameArrays) -> tuple[ActiveStatus, ...]:
    status = []
    for x, lo, hi in zip(p, arrays.p_min, arrays.p_max):
        if x <= lo + ACTIVE_TOL:
            status.append(ActiveStatus.AT_ZERO_GEN)
        elif x >= hi - ACTIVE_TOL:
            status.append(ActiveStatus.AT_CAPACITY)
        else:
            status.append(ActiveStatus.INNER)
    return tuple(status)


def _equilibrium(spec, arrays, p_net, active_set=None) -> Equilibrium:
    p_net = np.asarray(p_net, dtype=float)
    angles = solve_angles(spec.s, full_injection(spec, p_net, arrays))
    return Equilibrium(
        buses=spec.player_buses,
        p_net=p_net,
        p_gen=p_net + arrays.p_load,
        angles=angles,
        active_set=tuple(active_set) if active_set is not None else _classify(p_net, arrays),
    )


def _solve_partition(h, q, status, arrays) -> np.ndarray:
    p = np.zeros(len(status))
    free = [k for k, st in enumerate(status) if st is ActiveStatus.INNER]
    bound = [k for k, st in enumerate(status) if st is not ActiveStatus.INNER]
    for k in bound:
        p[k] = arrays.p_min[k] if status[k] is ActiveStatus.AT_ZERO_GEN else arrays.p_max[k]
    if free:
        sub = h[np.ix_(free, free)]
        rhs = q[free] - h[np.ix_(free, bound)] @ p[bound]
        if np.linalg.cond(sub) > 1e12:
            raise SingularReducedSystem(f"reduced system for players {free} is numerically singular")
        try:
            p[free] = np.linalg.solve(sub, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularReducedSystem(str(exc)) from exc
    return p


def solve_ne_direct(spec: GameSpec) -> Equilibrium:
    """Nash equilibrium by an active-set search over the fixed-point system H P = q.

    Starts from all players interior and moves one offending player at a time
    (lowest index first) between the interior and its bounds until every
    player's status agrees with its clamped best response.
    """
    arrays = game_arrays(spec)
    m = spec.n_players
    if m == 0:
        return _equilibrium(spec, arrays, np.zeros(0), ())
    h = arrays.s_dd / arrays.s_ii[:, None]
    q = (arrays.gamma - arrays.c) / arrays.s_ii
    status = [ActiveStatus.INNER] * m
    seen = set()
    while True:
        key = tuple(status)
        if key in seen:
            raise NoConvergentActiveSet(f"active set {[s.value for s in key]} revisited after {len(seen)} partitions")
        seen.add(key)
        p = _solve_partition(h, q, status, arrays)
        unconstrained = (arrays.gamma - (arrays.s_dd @ p + arrays.c - arrays.s_ii * p)) / arrays.s_ii
        move = None
        for k in range(m):
            st = status[k]
            if st is ActiveStatus.INNER:
                if p[k] <= arrays.p_min[k] + ACTIVE_TOL:
                    move = ActiveStatus.AT_ZERO_GEN
                elif p[k] >= arrays.p_max[k] - ACTIVE_TOL:
                    move = ActiveStatus.AT_CAPACITY
            elif st is ActiveStatus.AT_ZERO_GEN and unconstrained[k] > arrays.p_min[k] + ACTIVE_TOL:
                move = ActiveStatus.INNER
            elif st is ActiveStatus.AT_CAPACITY and unconstrained[k] < arrays.p_max[k] - ACTIVE_TOL:
                move = ActiveStatus.INNER
            if move is not None:
                logger.debug("player %d (bus %d): %s -> %s", k, spec.players[k].bus, st.value, move.value)
                status[k] = move
                break
        if move is None:
            break

    eq = _equilibrium(spec, arrays, p, status)
    residual = np.max(np.abs(best_responses(arrays, other_aggregates(spec, p, arrays)) - p))
    logger.debug("direct NE after %d partitions, fixed-point residual %.2e", len(seen), residual)
    return eq


def _projected_gradient(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    lipschitz: float,
    tol: float = config.TEAM_TOL,
    max_iter: int = config.TEAM_MAX_ITER,
) -> np.ndarray:
    """Minimize a smooth convex function over a box.

    Barzilai-Borwein trial steps with Armijo backtracking; the backtracking
    stops at the safe step 1/L.  Converged when the gradient mapping
    x - clip(x - grad/L) is below ``tol`` in max norm.
    """
    safe = 1.0 / lipschitz
    x = np.clip(np.zeros_like(lo), lo, hi)
    fx = objective(x)
    g = gradient(x)
    step = safe
    for it in range(max_iter):
        if np.max(np.abs(x - np.clip(x - safe * g, lo, hi)), initial=0.0) <= tol:
            logger.debug("projected gradient converged after %d iterations", it)
            return x
        t = step
        while True:
            x_new = np.clip(x - t * g, lo, hi)
            f_new = objective(x_new)
            if t <= safe or f_new <= fx + config.ARMIJO_SIGMA * g @ (x_new - x):
                break
            t = max(safe, t * config.BACKTRACK_FACTOR)
        g_new = gradient(x_new)
        dx = x_new - x
        dg = g_new - g
        curvature = dx @ dg
        step = (dx @ dx) / curvature if curvature > 0 else safe
        step = min(max(step, safe), 1e6 * safe)
        x, fx, g = x_new, f_new, g_new
    raise MaxIterationsExceeded(f"projected gradient did not converge in {max_iter} iterations")


def solve_team(spec: GameSpec, tol=config.TEAM_TOL, max_iter=config.TEAM_MAX_ITER) -> Equilibrium:
    """Minimize the weighted social cost sum(alpha_i U_i) over the players' boxes."""
    if spec.team_weights is None:
        raise GameError("team problem needs team_weights")
    arrays = game_arrays(spec)
    if spec.n_players == 0:
        return _equilibrium(spec, arrays, np.zeros(0), ())
    alpha = np.array(spec.team_weights)
    eta2 = np.array([pl.eta**2 for pl in spec.players])
    psi = np.array([pl.psi for pl in spec.players])
    scale = spec.market.energy_scale(spec.net.base_mva)
    linear = alpha * scale * (psi - spec.market.zeta)
    weights = alpha * eta2
    s_dd = arrays.s_dd

    # constant terms of the cost are dropped
    def objective(p):
        theta = s_dd @ p + arrays.c
        return float(linear @ p + 0.5 * weights @ theta**2)

    def gradient(p):
        return linear + s_dd @ (weights * (s_dd @ p + arrays.c))

    hessian = s_dd @ (weights[:, None] * s_dd)
    lipschitz = float(np.linalg.eigvalsh(hessian).max())
    p = _projected_gradient(objective, gradient, arrays.p_min, arrays.p_max, lipschitz, tol, max_iter)
    return _equilibrium(spec, arrays, p)


def solve_potential(spec: GameSpec, tol=config.TEAM_TOL, max_iter=config.TEAM_MAX_ITER) -> Equilibrium:
    """Minimize the exact potential 1/2 P'S_dd P + (c - gamma)'P of the game.

    Its gradient is theta_i - gamma_i, so its box minimizer is the Nash
    equilibrium; this path shares no code with ``solve_ne_direct``.
    """
    arrays = game_arrays(spec)
    if spec.n_players == 0:
        return _equilibrium(spec, arrays, np.zeros(0), ())
    s_dd = arrays.s_dd
    linear = arrays.c - arrays.gamma

    def objective(p):
        return float(0.5 * p @ s_dd @ p + linear @ p)

    def gradient(p):
        return s_dd @ p + linear

    lipschitz = float(np.linalg.eigvalsh(s_dd).max())
    p = _projected_gradient(objective, gradient, arrays.p_min, arrays.p_max, lipschitz, tol, max_iter)
    return _equilibrium(spec, arrays, p)


def social_cost(spec: GameSpec, eq: Equilibrium) -> float:
    """sum(alpha_i U_i) at an operating point."""
    if spec.team_weights is None:
        raise GameError("social cost needs team_weights")
    theta = eq.player_angles
    return float(sum(a * cost(spec, i, eq.p_gen[i], theta[i]) for i, a in enumerate(spec.team_weights)))


def loss_of_efficiency(spec: GameSpec) -> float:
    """Weighted cost at the Nash equilibrium over weighted cost at the team optimum.

    At least 1 when the costs are positive and in (0, 1] when both are
    negative (net revenue).  Coinciding costs give exactly 1.

    :raises GameError: if the team cost is zero or the two costs differ in sign
    """
    ne_cost = social_cost(spec, solve_ne_direct(spec))
    team_cost = social_cost(spec, solve_team(spec))
    if math.isclose(ne_cost, team_cost, rel_tol=config.LOE_RTOL, abs_tol=0.0):
        return 1.0
    if team_cost == 0.0 or ne_cost * team_cost <= 0.0:
        raise GameError(f"loss of efficiency undefined for costs {ne_cost:.6g} (NE) and {team_cost:.6g} (team)")
    if ne_cost < team_cost - config.LOE_RTOL * abs(team_cost):
        logger.warning("NE cost %.9g below team cost %.9g: team solve did not reach the optimum", ne_cost, team_cost)
    return ne_cost / team_cost


def brute_force_best_response(spec: GameSpec, i: int, others_fixed) -> float:
    """Best response of player ``i`` by grid search and bounded scalar refinement.

    Independent of the closed form: it only evaluates the reduced cost.
    """
    d = derive_player(spec, i)
    load = spec.players[i].p_load
    lo, hi = d.p_min, d.p_max
    if hi <= lo:
        return lo

    def f(p):
        return reduced_cost(spec, i, p + load, others_fixed)

    grid = np.linspace(lo, hi, config.BRUTE_FORCE_POINTS + 1)
    k = int(np.argmin(f(grid)))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": config.BRUTE_FORCE_XTOL})
    x, best = float(res.x), float(f(res.x))
    for edge in (lo, hi):
        value = float(f(edge))
        if value <= best:
            x, best = edge, value
    return x


def calibrate_generator(spec: GameSpec, bus: int, target_p_gen: Sequence[float]) -> float:
    """Back-solve a fixed generator's output so the interior equilibrium fits the targets.

    With every player interior the equilibrium is affine in that output, so the
    least-squares value has a closed form.

    :param spec: game whose generator output is unknown
    :param bus: generator bus to calibrate
    :param target_p_gen: target player generations, per-unit, in player order
    :return: generator output in per-unit (may be negative; the caller decides)
    """
    if spec.net.bus(bus).kind is not BusKind.GENERATOR:
        raise GameError(f"bus {bus} is not a generator bus")
    target = np.asarray(target_p_gen, dtype=float)
    if target.shape != (spec.n_players,):
        raise GameError(f"{target.shape[0] if target.ndim else 0} targets for {spec.n_players} players")
    arrays = game_arrays(spec)
    h = arrays.s_dd / arrays.s_ii[:, None]
    column = spec.s.matrix[arrays.idx, spec.s.index_of(bus)]
    c0 = arrays.c - spec.net.bus(bus).p_gen_fixed * column
    offset = np.linalg.solve(h, (arrays.gamma - c0) / arrays.s_ii)
    slope = np.linalg.solve(h, -column / arrays.s_ii)
    residual = target - arrays.p_load - offset
    value = float(slope @ residual / (slope @ slope))
    logger.info("calibrated generator %d output %.6f pu", bus, value)
    return value
