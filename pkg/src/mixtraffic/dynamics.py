"""Vehicle state, IDM car following, demand spawning and Euler integration."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .net import Movement, RoadNetwork, Route, shortest_path

#: Speed below which a vehicle counts as stopped, m/s.
STOP_SPEED = 0.1
#: Physical vehicle length, m.
VEHICLE_LENGTH = 5.0
#: Braking used when a Stop command has no usable distance, m/s^2.
MAX_BRAKE = 9.0


class SimulationError(RuntimeError):
    """Physical inconsistency detected while stepping (e.g. non-positive gap)."""


class VehicleClass(str, Enum):
    RV = "RV"
    HV = "HV"


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    ``v0`` of ``None`` means "use the speed limit of the current link".
    """

    v0: float | None = None
    a_max: float = 2.6
    b: float = 4.5
    s0: float = 2.0
    T: float = 1.0
    delta: float = 4.0

    def __post_init__(self):
        for name in ("a_max", "b", "s0", "T", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be > 0")
        if self.v0 is not None and not self.v0 > 0:
            raise ValueError("IDM parameter v0 must be > 0")


def idm_accel(ego_speed: float, gap: float, leader_speed: float, params: IdmParams, v0: float | None = None) -> float:
    """Standard IDM acceleration.

    ``gap`` is bumper-to-bumper distance; pass ``math.inf`` when there is no
    leader.  The result is bounded above by ``a_max``.
    """
    if not gap > 0:
        raise SimulationError(f"non-positive gap {gap!r} passed to IDM")
    v0 = v0 if v0 is not None else params.v0
    if v0 is None:
        raise ValueError("desired speed v0 is unset")
    free = (ego_speed / v0) ** params.delta
    if math.isinf(gap):
        return params.a_max * (1.0 - free)
    dv = ego_speed - leader_speed
    s_star = params.s0 + max(0.0, ego_speed * params.T + ego_speed * dv / (2.0 * math.sqrt(params.a_max * params.b)))
    return params.a_max * (1.0 - free - (s_star / gap) ** 2)


@dataclass(eq=False)
class Vehicle:
    id: int
    cls: VehicleClass
    route: Route
    base_cost: float
    spawn_time: float
    route_index: int = 0
    pos: float = 0.0
    speed: float = 0.0
    accel: float = 0.0
    #: set while traversing a junction interior
    movement: Movement | None = None
    stopped_time: float = 0.0
    stop_start: float | None = None
    #: stopped time accumulated on the current approach's control zone
    zone_wait: float = 0.0
    last_reroute: float = -math.inf
    finish_time: float | None = None
    granted: bool = False
    reroutes: int = 0

    @property
    def is_rv(self) -> bool:
        return self.cls is VehicleClass.RV

    @property
    def edge(self) -> int:
        return self.route.edges[self.route_index]

    @property
    def destination(self) -> int:
        return self.route.edges[-1]

    @property
    def next_edge(self) -> int | None:
        i = self.route_index + 1
        return self.route.edges[i] if i < len(self.route.edges) else None

    @property
    def completed(self) -> bool:
        return self.finish_time is not None


@dataclass(frozen=True)
class Demand:
    """Origin-destination flow in veh/s.  ``rv_rate`` overrides the scenario rate."""

    origin: int
    destination: int
    rate: float
    rv_rate: float | None = None


def spawn_step(
    net: RoadNetwork,
    demand: Sequence[Demand],
    rv_rate: float,
    rng: np.random.Generator,
    now: float = 0.0,
    dt: float = 1.0,
    first_id: int = 0,
    routes: dict | None = None,
) -> list[Vehicle]:
    """Bernoulli arrivals for one step.

    Two uniforms are drawn per OD pair on every call, whether or not a vehicle
    arrives, so the stream position never depends on the outcome.
    """
    if not 0.0 <= rv_rate <= 1.0:
        raise ValueError("rv_rate must lie in [0, 1]")
    routes = {} if routes is None else routes
    draws = rng.random((len(demand), 2))
    out = []
    for (u_arrive, u_class), od in zip(draws, demand):
        if u_arrive >= od.rate * dt:
            continue
        p_rv = rv_rate if od.rv_rate is None else od.rv_rate
        key = (od.origin, od.destination)
        route = routes.get(key)
        if route is None:
            route = routes[key] = shortest_path(net, od.origin, od.destination, net.baseline_costs)
        cls = VehicleClass.RV if u_class < p_rv else VehicleClass.HV
        out.append(Vehicle(first_id + len(out), cls, route, route.base_cost, now))
    return out


def entry_headroom(vehicle_ahead: Vehicle | None, params: IdmParams) -> float:
    """Free space at the start of an edge; ``inf`` when the edge is empty."""
    if vehicle_ahead is None:
        return math.inf
    return vehicle_ahead.pos - VEHICLE_LENGTH


def insertion_speed(headroom: float, limit: float, params: IdmParams) -> float | None:
    """Speed to insert at, or ``None`` when there is less than ``s0`` of room."""
    if headroom < params.s0:
        return None
    if math.isinf(headroom):
        return limit
    return max(0.0, min(limit, (headroom - params.s0) / params.T))


def link_length(net: RoadNetwork, v: Vehicle) -> float:
    return v.movement.length if v.movement is not None else net.edges[v.edge].length


def integrate(
    vehicle: Vehicle,
    accel: float,
    dt: float,
    net: RoadNetwork,
    now: float = 0.0,
    max_advance: float = math.inf,
) -> list[tuple]:
    """Explicit Euler step with hand-off along the route.

    ``max_advance`` caps the distance travelled this step (leader gap, stop
    line); the speed is reduced to match when the cap binds.  Returns the
    link transitions as event tuples ``("enter", movement)``,
    ``("exit", movement)`` and ``("done",)``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    v = vehicle
    limit = net.edges[v.edge].speed_limit
    speed = min(limit, max(0.0, v.speed + accel * dt))
    advance = speed * dt
    if advance > max_advance:
        advance = max(0.0, max_advance)
        speed = advance / dt
    v.accel = (speed - v.speed) / dt
    v.speed = speed
    if speed < STOP_SPEED:
        v.stopped_time += dt
        if v.stop_start is None:
            v.stop_start = now
    else:
        v.stop_start = None

    events: list[tuple] = []
    v.pos += advance
    while True:
        length = link_length(net, v)
        if v.pos < length:
            break
        if v.movement is not None:
            m = v.movement
            v.pos -= length
            v.movement = None
            v.route_index += 1
            v.granted = False
            events.append(("exit", m))
            continue
        nxt = v.next_edge
        if nxt is None:
            v.pos = length
            v.finish_time = now + dt
            events.append(("done",))
            break
        m = net.movement_between(v.edge, nxt)
        v.pos -= length
        v.movement = m
        v.zone_wait = 0.0
        events.append(("enter", m))
    return events
