"""Road network graph, junction geometry and movement conflicts.

A network is a set of junctions joined by directed single-lane edges.  Any
junction with at least two distinct neighbours is an *intersection*: every
incoming edge can continue onto every outgoing edge except its own reverse
(no U-turns), and each such pair is a :class:`Movement` with an interior
polyline through the junction box.  Degree-one junctions are terminals
(sources and sinks at the boundary).

Approaches of an intersection occupy fixed compass slots numbered clockwise
from north in 45 degree steps, so a 4-way junction uses slots 0, 2, 4, 6 and
the remaining slots stay empty.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

N_SLOTS = 8

#: Half-width of the square junction box, m.
BOX_HALF_WIDTH = 6.0
#: Lateral offset of the driving lane from the road centreline (right-hand traffic), m.
LANE_OFFSET = 2.0

_EPS = 1e-9


class NoRouteError(LookupError):
    """Destination edge cannot be reached from the origin edge."""


@dataclass(frozen=True)
class Junction:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    index: int
    id: str
    source: str
    target: str
    length: float
    speed_limit: float

    @property
    def free_flow_time(self) -> float:
        return self.length / self.speed_limit


@dataclass(frozen=True)
class Movement:
    """One way through an intersection, from ``in_edge`` onto ``out_edge``."""

    index: int
    junction: str
    approach: int
    in_edge: int
    out_edge: int
    path: tuple[tuple[float, float], ...]
    turn: str

    @cached_property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.path, self.path[1:]))


@dataclass
class Intersection:
    index: int
    junction: str
    #: approach slot -> incoming edge index
    approaches: dict[int, int]
    #: global movement indices, in creation order
    movements: list[int]
    #: approach slot -> movement index with the smallest turning angle
    through: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Route:
    """Ordered edge list plus its baseline (length) cost."""

    edges: tuple[int, ...]
    base_cost: float

    def __len__(self) -> int:
        return len(self.edges)


ConflictMap = dict[int, frozenset[int]]


class RoadNetwork:
    """Immutable directed road graph.

    Parameters
    ----------
    junctions : sequence of Junction
    edges : sequence of (id, source, target, length, speed_limit)
        ``length`` may be ``None`` to use the straight-line distance.
    """

    def __init__(self, junctions: Sequence[Junction], edges: Sequence[tuple]):
        self.junctions: dict[str, Junction] = {}
        for j in junctions:
            if j.id in self.junctions:
                raise ValueError(f"duplicate junction id {j.id!r}")
            self.junctions[j.id] = j

        self.edges: list[Edge] = []
        self.edge_index: dict[str, int] = {}
        for eid, src, dst, length, limit in edges:
            if src not in self.junctions or dst not in self.junctions:
                raise ValueError(f"edge {eid!r} references unknown junction")
            if src == dst:
                raise ValueError(f"edge {eid!r} is a self-loop")
            if length is None:
                a, b = self.junctions[src], self.junctions[dst]
                length = math.hypot(b.x - a.x, b.y - a.y)
            if not length > 0:
                raise ValueError(f"edge {eid!r}: length must be > 0")
            if not limit > 0:
                raise ValueError(f"edge {eid!r}: speed limit must be > 0")
            if eid in self.edge_index:
                raise ValueError(f"duplicate edge id {eid!r}")
            e = Edge(len(self.edges), eid, src, dst, float(length), float(limit))
            self.edge_index[eid] = e.index
            self.edges.append(e)

        self.in_edges: dict[str, list[int]] = {j: [] for j in self.junctions}
        self.out_edges: dict[str, list[int]] = {j: [] for j in self.junctions}
        for e in self.edges:
            self.out_edges[e.source].append(e.index)
            self.in_edges[e.target].append(e.index)

        self.movements: list[Movement] = []
        self.movement_of: dict[tuple[int, int], int] = {}
        self.intersections: list[Intersection] = []
        self.intersection_at: dict[str, int] = {}
        self._build_movements()
        self.conflicts: ConflictMap = derive_conflicts(self)

        self.successors: list[list[int]] = [[] for _ in self.edges]
        for m in self.movements:
            self.successors[m.in_edge].append(m.out_edge)
        for s in self.successors:
            s.sort()

        self.baseline_costs = np.array([e.length for e in self.edges], dtype=float)

    # -- construction helpers -------------------------------------------------

    def _neighbours(self, jid: str) -> set[str]:
        return {self.edges[e].target for e in self.out_edges[jid]} | {
            self.edges[e].source for e in self.in_edges[jid]
        }

    def is_terminal(self, jid: str) -> bool:
        return len(self._neighbours(jid)) < 2

    def _build_movements(self) -> None:
        for jid, junc in self.junctions.items():
            if self.is_terminal(jid):
                continue
            slots = _assign_slots(self, jid)
            inter = Intersection(len(self.intersections), jid, {}, [])
            for e_in in sorted(self.in_edges[jid], key=lambda i: slots[i]):
                k = slots[e_in]
                inter.approaches[k] = e_in
                src = self.edges[e_in].source
                best = None
                for e_out in self.out_edges[jid]:
                    if self.edges[e_out].target == src:
                        continue
                    path, turn, angle = _movement_path(self, e_in, e_out)
                    m = Movement(len(self.movements), jid, k, e_in, e_out, path, turn)
                    self.movements.append(m)
                    self.movement_of[(e_in, e_out)] = m.index
                    inter.movements.append(m.index)
                    if best is None or angle < best[0]:
                        best = (angle, m.index)
                if best is not None:
                    inter.through[k] = best[1]
            self.intersection_at[jid] = inter.index
            self.intersections.append(inter)

    # -- queries ----------------------------------------------------------------

    @property
    def source_edges(self) -> list[int]:
        return [e.index for e in self.edges if self.is_terminal(e.source)]

    @property
    def sink_edges(self) -> list[int]:
        return [e.index for e in self.edges if self.is_terminal(e.target)]

    def edge(self, ref: int | str) -> Edge:
        return self.edges[ref if isinstance(ref, int) else self.edge_index[ref]]

    def movement_between(self, e_in: int, e_out: int) -> Movement:
        return self.movements[self.movement_of[(e_in, e_out)]]

    def intersection_of_edge(self, e: int) -> Intersection | None:
        idx = self.intersection_at.get(self.edges[e].target)
        return None if idx is None else self.intersections[idx]

    def route_from_edges(self, edges: Sequence[int]) -> Route:
        edges = tuple(int(e) for e in edges)
        if not edges:
            raise ValueError("empty route")
        for a, b in zip(edges, edges[1:]):
            if (a, b) not in self.movement_of:
                raise ValueError(f"edges {a} -> {b} are not connected by a movement")
        return Route(edges, float(sum(self.edges[e].length for e in edges)))


def _heading(net: RoadNetwork, e: int) -> tuple[float, float]:
    edge = net.edges[e]
    a, b = net.junctions[edge.source], net.junctions[edge.target]
    dx, dy = b.x - a.x, b.y - a.y
    n = math.hypot(dx, dy)
    if n < _EPS:
        raise ValueError(f"edge {edge.id!r} has coincident end junctions")
    return dx / n, dy / n


def _right(d: tuple[float, float]) -> tuple[float, float]:
    return d[1], -d[0]


def _assign_slots(net: RoadNetwork, jid: str) -> dict[int, int]:
    """Compass slot per incoming edge: bearing of the upstream junction, clockwise from north."""
    j = net.junctions[jid]
    bearings = []
    for e in net.in_edges[jid]:
        u = net.junctions[net.edges[e].source]
        bearing = math.degrees(math.atan2(u.x - j.x, u.y - j.y)) % 360.0
        bearings.append((bearing, e))
    if len(bearings) > N_SLOTS:
        raise ValueError(f"junction {jid!r} has more than {N_SLOTS} approaches")
    taken: dict[int, int] = {}
    for bearing, e in sorted(bearings):
        k = int(round(bearing / 45.0)) % N_SLOTS
        while k in taken.values():
            k = (k + 1) % N_SLOTS
        taken[e] = k
    return taken


def _movement_path(net: RoadNetwork, e_in: int, e_out: int):
    j = net.junctions[net.edges[e_in].target]
    d_in, d_out = _heading(net, e_in), _heading(net, e_out)
    r_in, r_out = _right(d_in), _right(d_out)
    h, o = BOX_HALF_WIDTH, LANE_OFFSET
    entry = (j.x - d_in[0] * h + r_in[0] * o, j.y - d_in[1] * h + r_in[1] * o)
    exit_ = (j.x + d_out[0] * h + r_out[0] * o, j.y + d_out[1] * h + r_out[1] * o)
    cross = d_in[0] * d_out[1] - d_in[1] * d_out[0]
    dot = d_in[0] * d_out[0] + d_in[1] * d_out[1]
    angle = abs(math.atan2(cross, dot))
    if abs(cross) < 1e-6:
        return (entry, exit_), "straight", angle
    # knee: entry + s*d_in == exit - t*d_out
    rx, ry = exit_[0] - entry[0], exit_[1] - entry[1]
    s = (rx * d_out[1] - ry * d_out[0]) / cross
    knee = (entry[0] + s * d_in[0], entry[1] + s * d_in[1])
    turn = "left" if cross > 0 else "right"
    path = [entry]
    for p in (knee, exit_):
        if math.dist(p, path[-1]) > 1e-6:
            path.append(p)
    if len(path) < 2:
        # hairpin right turn: entry and exit coincide, so swing round the centre
        mid = (j.x + 0.5 * o * (r_in[0] + r_out[0]), j.y + 0.5 * o * (r_in[1] + r_out[1]))
        path = [entry, mid, exit_]
    return tuple(path), turn, angle


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    return (
        min(p[0], r[0]) - _EPS <= q[0] <= max(p[0], r[0]) + _EPS
        and min(p[1], r[1]) - _EPS <= q[1] <= max(p[1], r[1]) + _EPS
    )


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed-segment intersection test (touching and collinear overlap count)."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > _EPS and d2 < -_EPS) or (d1 < -_EPS and d2 > _EPS)) and (
        (d3 > _EPS and d4 < -_EPS) or (d3 < -_EPS and d4 > _EPS)
    ):
        return True
    if abs(d1) <= _EPS and _on_segment(q1, p1, q2):
        return True
    if abs(d2) <= _EPS and _on_segment(q1, p2, q2):
        return True
    if abs(d3) <= _EPS and _on_segment(p1, q1, p2):
        return True
    if abs(d4) <= _EPS and _on_segment(p1, q2, p2):
        return True
    return False


def polylines_intersect(a: Sequence, b: Sequence) -> bool:
    return any(
        segments_intersect(a[i], a[i + 1], b[j], b[j + 1])
        for i in range(len(a) - 1)
        for j in range(len(b) - 1)
    )


def derive_conflicts(net: RoadNetwork) -> ConflictMap:
    """Movement conflict sets for every intersection.

    Two movements conflict when their interior polylines cross or when they
    merge onto the same outgoing edge.  Movements sharing an incoming edge
    diverge from a common entry point and never conflict.
    """
    for m in net.movements:
        if len(m.path) < 2 or any(math.dist(a, b) < _EPS for a, b in zip(m.path, m.path[1:])):
            raise ValueError(f"movement {m.index} has a degenerate interior path")
    out: dict[int, set[int]] = {m.index: set() for m in net.movements}
    for inter in net.intersections:
        ms = [net.movements[i] for i in inter.movements]
        for a_i, a in enumerate(ms):
            for b in ms[a_i + 1:]:
                if a.in_edge == b.in_edge:
                    continue
                if a.out_edge == b.out_edge or polylines_intersect(a.path, b.path):
                    out[a.index].add(b.index)
                    out[b.index].add(a.index)
    return {k: frozenset(v) for k, v in out.items()}


def build_grid(rows: int, cols: int, edge_length: float = 100.0, speed_limit: float = 13.9) -> RoadNetwork:
    """Manhattan grid of 4-way intersections with boundary source/sink stubs.

    Junction ``J{r}_{c}`` sits at ``(c*L, -r*L)`` (row 0 is the northern row).
    Stub terminals ``N{c}``, ``S{c}``, ``W{r}``, ``E{r}`` lie one edge length
    outside the grid and connect to the boundary junctions in both directions.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    if not edge_length > 0 or not speed_limit > 0:
        raise ValueError("edge_length and speed_limit must be > 0")
    L = float(edge_length)
    junctions = [Junction(f"J{r}_{c}", c * L, -r * L) for r in range(rows) for c in range(cols)]
    junctions += [Junction(f"N{c}", c * L, L) for c in range(cols)]
    junctions += [Junction(f"S{c}", c * L, -rows * L) for c in range(cols)]
    junctions += [Junction(f"W{r}", -L, -r * L) for r in range(rows)]
    junctions += [Junction(f"E{r}", cols * L, -r * L) for r in range(rows)]

    pairs = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                pairs.append((f"J{r}_{c}", f"J{r}_{c + 1}"))
            if r + 1 < rows:
                pairs.append((f"J{r}_{c}", f"J{r + 1}_{c}"))
    for c in range(cols):
        pairs.append((f"N{c}", f"J0_{c}"))
        pairs.append((f"J{rows - 1}_{c}", f"S{c}"))
    for r in range(rows):
        pairs.append((f"W{r}", f"J{r}_0"))
        pairs.append((f"J{r}_{cols - 1}", f"E{r}"))

    edges = []
    for a, b in pairs:
        edges.append((f"{a}->{b}", a, b, L, speed_limit))
        edges.append((f"{b}->{a}", b, a, L, speed_limit))
    return RoadNetwork(junctions, edges)


def shortest_path(net: RoadNetwork, from_edge: int, to_edge: int, costs: Sequence[float] | np.ndarray) -> Route:
    """Minimum-cost edge sequence from ``from_edge`` to ``to_edge`` (both included).

    Dijkstra over the edge graph.  The heap is keyed by ``(cost, edge index)``
    and relaxation is strict, so equal-cost alternatives resolve the same way
    on every call.
    """
    n = len(net.edges)
    if not (0 <= from_edge < n and 0 <= to_edge < n):
        raise IndexError("edge index out of range")
    dist = [math.inf] * n
    prev = [-1] * n
    dist[from_edge] = float(costs[from_edge])
    heap = [(dist[from_edge], from_edge)]
    done = [False] * n
    while heap:
        d, e = heapq.heappop(heap)
        if done[e]:
            continue
        done[e] = True
        if e == to_edge:
            break
        for f in net.successors[e]:
            nd = d + float(costs[f])
            if nd < dist[f]:
                dist[f] = nd
                prev[f] = e
                heapq.heappush(heap, (nd, f))
    if not done[to_edge]:
        raise NoRouteError(f"no route from edge {from_edge} to edge {to_edge}")
    path = [to_edge]
    while path[-1] != from_edge:
        path.append(prev[path[-1]])
    path.reverse()
    return Route(tuple(path), float(sum(net.edges[e].length for e in path)))


def route_cost(route: Route, costs: Sequence[float] | np.ndarray | Mapping[int, float]) -> float:
    if not route.edges:
        raise ValueError("empty route")
    return float(sum(costs[e] for e in route.edges))
