"""Intersection control zones: occupancy, threat scores, observations, Stop/Go and the safety override."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .dynamics import MAX_BRAKE, STOP_SPEED, VEHICLE_LENGTH, Vehicle
from .net import N_SLOTS, ConflictMap, Intersection, RoadNetwork


class Action(IntEnum):
    STOP = 0
    GO = 1


@dataclass(frozen=True)
class ControlZoneConfig:
    """Control-zone geometry and threat normalisation.

    ``c0``, ``cell_weights`` and ``z_norm`` default to 3, uniform 1 and 5.
    """

    radius: float = 30.0
    c0: int = 3
    cell_weights: tuple[float, ...] | None = None
    z_norm: float = 5.0
    cell_length: float = 10.0
    wait_cap: float = 60.0
    min_gap: float = 2.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if self.c0 < 1:
            raise ValueError("c0 must be >= 1")
        if not self.z_norm > 0:
            raise ValueError("z_norm must be > 0")
        if not self.cell_length > 0:
            raise ValueError("cell_length must be > 0")
        w = self.weights
        if len(w) != self.c0 or any(x < 0 for x in w):
            raise ValueError("cell_weights must hold c0 non-negative values")

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(self.cell_weights) if self.cell_weights is not None else (1.0,) * self.c0

    @property
    def n_cells(self) -> int:
        return max(self.c0, math.ceil(self.radius / self.cell_length - 1e-9))

    @property
    def queue_capacity(self) -> int:
        return max(1, int(self.radius // (self.min_gap + VEHICLE_LENGTH)))


class OccupancyGrid:
    """Vehicle counts per (movement, cell); cell 1 is nearest the junction."""

    def __init__(self, movements: Sequence[int], n_cells: int):
        self.rows = {m: i for i, m in enumerate(movements)}
        self.counts = np.zeros((len(self.rows), n_cells), dtype=np.int64)

    @property
    def n_cells(self) -> int:
        return self.counts.shape[1]

    def add(self, movement: int, cell: int, n: int = 1) -> None:
        self.counts[self.rows[movement], cell - 1] += n

    def count(self, movement: int, cell: int) -> int:
        return int(self.counts[self.rows[movement], cell - 1])


def cell_of(distance: float, cfg: ControlZoneConfig) -> int:
    return min(int(distance // cfg.cell_length) + 1, cfg.n_cells)


def distance_to_stop_line(net: RoadNetwork, v: Vehicle) -> float:
    return net.edges[v.edge].length - v.pos


def in_zone(net: RoadNetwork, v: Vehicle, cfg: ControlZoneConfig) -> bool:
    """On an intersection approach within ``radius`` of the stop line."""
    if v.movement is not None:
        return False
    if net.intersection_of_edge(v.edge) is None:
        return False
    return distance_to_stop_line(net, v) <= cfg.radius


def build_occupancy(net: RoadNetwork, inter: Intersection, vehicles: Iterable[Vehicle], cfg: ControlZoneConfig) -> OccupancyGrid:
    grid = OccupancyGrid(inter.movements, cfg.n_cells)
    approach_edges = set(inter.approaches.values())
    for v in vehicles:
        if v.movement is not None or v.edge not in approach_edges:
            continue
        d = distance_to_stop_line(net, v)
        if d > cfg.radius:
            continue
        nxt = v.next_edge
        if nxt is None:
            continue
        grid.add(net.movement_of[(v.edge, nxt)], cell_of(d, cfg))
    return grid


def conflict_pressure(grid: OccupancyGrid, movement: int, conflicts: ConflictMap, cfg: ControlZoneConfig) -> float:
    """Weighted count of vehicles in the first ``c0`` cells of every conflicting movement."""
    w = np.asarray(cfg.weights, dtype=float)
    c0 = min(cfg.c0, grid.n_cells)
    total = 0.0
    for p in sorted(conflicts.get(movement, ())):
        row = grid.rows.get(p)
        if row is not None:
            total += float(grid.counts[row, :c0] @ w[:c0])
    return total


def threat_score(pressure: float, z_norm: float) -> float:
    if pressure < 0 or not z_norm > 0:
        raise ValueError("pressure must be >= 0 and z_norm > 0")
    return min(pressure / z_norm, 1.0)


class IntersectionController:
    """Passage grants for one intersection.

    A granted vehicle keeps its grant until it leaves the junction interior,
    so the grant table always covers every interior occupant.
    """

    def __init__(self, inter: Intersection, conflicts: ConflictMap):
        self.inter = inter
        self.conflicts = conflicts
        self.grants: dict[int, int] = {}

    def blocked(self, movement: int) -> bool:
        c = self.conflicts[movement]
        return any(m in c for m in self.grants.values())

    def grant(self, vehicle_id: int, movement: int) -> None:
        if self.blocked(movement):
            raise RuntimeError("grant would admit conflicting movements")
        self.grants[vehicle_id] = movement

    def release(self, vehicle_id: int) -> None:
        self.grants.pop(vehicle_id, None)

    def resolve(self, requests: Sequence[tuple[Vehicle, int]]) -> dict[int, bool]:
        """Admit simultaneous requests in priority order.

        Priority is longer zone wait first, then lower vehicle id.  Returns
        ``vehicle id -> granted``.
        """
        out = {}
        for v, m in sorted(requests, key=lambda r: (-r[0].zone_wait, r[0].id)):
            if self.blocked(m):
                out[v.id] = False
            else:
                self.grant(v.id, m)
                out[v.id] = True
        return out


def safety_override(controller: IntersectionController, movement: int, action: Action) -> tuple[Action, bool]:
    """Turn an unsafe Go into Stop and flag the conflict; Stop passes through."""
    if action == Action.GO and controller.blocked(movement):
        return Action.STOP, True
    return action, False


def apply_action(speed: float, action: Action, d_int: float, a_max: float, leader_cap: float = math.inf) -> float:
    """Commanded acceleration for a Stop/Go decision.

    Stop brakes at ``u^2 / (2 d)`` to halt at the stop line; Go uses full
    acceleration.  Both are capped by ``leader_cap`` (car-following limit).
    """
    if action == Action.GO:
        return min(a_max, leader_cap)
    if speed <= 0.0:
        a = 0.0
    elif d_int <= 0.0:
        a = -MAX_BRAKE
    else:
        a = -(speed * speed) / (2.0 * d_int)
    return min(a, leader_cap)


@dataclass
class Snapshot:
    """Read-only state of one intersection at the start of a decision step."""

    inter: Intersection
    #: slot -> [(vehicle, distance to stop line)] nearest first, zone only
    zone: dict[int, list[tuple[Vehicle, float]]]
    queues: np.ndarray
    waits: np.ndarray
    grid: OccupancyGrid
    leaders: dict[int, Vehicle]
    slot_movement: dict[int, int]
    threat: np.ndarray
    interior_conflict: np.ndarray
    cell_bits: np.ndarray


def take_snapshot(
    net: RoadNetwork,
    inter: Intersection,
    edge_vehicles: dict[int, list[Vehicle]],
    controller: IntersectionController,
    cfg: ControlZoneConfig,
) -> Snapshot:
    """Zone membership, queues, waits, occupancy and per-slot threat.

    ``edge_vehicles`` lists the vehicles of each edge front (largest position) first.
    """
    zone: dict[int, list[tuple[Vehicle, float]]] = {}
    queues = np.zeros(N_SLOTS)
    waits = np.zeros(N_SLOTS)
    grid = OccupancyGrid(inter.movements, cfg.n_cells)
    cell_bits = np.zeros((N_SLOTS, cfg.c0))
    leaders: dict[int, Vehicle] = {}
    for k, e in inter.approaches.items():
        length = net.edges[e].length
        members = []
        halted = []
        for v in edge_vehicles.get(e, ()):
            d = length - v.pos
            if d > cfg.radius:
                break
            members.append((v, d))
            c = cell_of(d, cfg)
            nxt = v.next_edge
            if nxt is not None:
                grid.add(net.movement_of[(e, nxt)], c)
            if c <= cfg.c0:
                cell_bits[k, c - 1] = 1.0
            if v.speed < STOP_SPEED:
                halted.append(v.zone_wait)
            if k not in leaders and not v.granted:
                leaders[k] = v
        zone[k] = members
        queues[k] = len(halted)
        waits[k] = float(np.mean(halted)) if halted else 0.0

    slot_movement = {}
    threat = np.zeros(N_SLOTS)
    interior = np.zeros(N_SLOTS)
    for k, e in inter.approaches.items():
        lead = leaders.get(k)
        nxt = lead.next_edge if lead is not None else None
        m = net.movement_of[(e, nxt)] if nxt is not None else inter.through.get(k)
        if m is None:
            continue
        slot_movement[k] = m
        threat[k] = threat_score(conflict_pressure(grid, m, net.conflicts, cfg), cfg.z_norm)
        interior[k] = 1.0 if controller.blocked(m) else 0.0
    return Snapshot(inter, zone, queues, waits, grid, leaders, slot_movement, threat, interior, cell_bits)


@dataclass(frozen=True)
class Observation:
    """Fixed-width local observation: queues, waits, threat, occupancy, ego slot."""

    queues: np.ndarray
    waits: np.ndarray
    threat: np.ndarray
    occupancy: np.ndarray
    ego_slot: int

    def vector(self) -> np.ndarray:
        onehot = np.zeros(N_SLOTS)
        onehot[self.ego_slot] = 1.0
        return np.concatenate([self.queues, self.waits, self.threat, self.occupancy, onehot])

    @property
    def ego_wait(self) -> float:
        return float(self.waits[self.ego_slot])

    @property
    def ego_threat(self) -> float:
        return float(self.threat[self.ego_slot])

    @property
    def ego_queue(self) -> float:
        return float(self.queues[self.ego_slot])

    @property
    def ego_interior(self) -> float:
        width = self.occupancy.size // N_SLOTS
        return float(self.occupancy[self.ego_slot * width])


def observation_width(cfg: ControlZoneConfig) -> int:
    return 3 * N_SLOTS + N_SLOTS * (1 + cfg.c0) + N_SLOTS


def build_observation(snap: Snapshot, ego_slot: int, cfg: ControlZoneConfig) -> Observation:
    q = np.clip(snap.queues / cfg.queue_capacity, 0.0, 1.0)
    w = np.clip(snap.waits / cfg.wait_cap, 0.0, 1.0)
    g = np.concatenate([snap.interior_conflict[:, None], snap.cell_bits], axis=1).ravel()
    return Observation(q, w, snap.threat.copy(), g, int(ego_slot))
