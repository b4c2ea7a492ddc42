"""Deterministic discrete-time orchestration, scenario runs and sweeps.

Step order (fixed; changing it changes results):

1. spawn arrivals and release deferred vehicles onto entry edges
2. coordinator update every ``update_interval`` steps, then RV reroute checks
3. Stop/Go decisions for queue-leading RVs in control zones, HV entry requests
4. safety override / grant arbitration, control and reward logging
5. IDM and action accelerations, Euler integration with link hand-off
6. metric capture (zone rows, approach waits, interior conflict audit)
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .agent import AlwaysGoPolicy, HeuristicPolicy, Policy, RandomPolicy, load_checkpoint
from .control import (
    Action,
    ControlZoneConfig,
    IntersectionController,
    apply_action,
    build_observation,
    take_snapshot,
)
from .dynamics import (
    Demand,
    IdmParams,
    STOP_SPEED,
    VEHICLE_LENGTH,
    SimulationError,
    Vehicle,
    idm_accel,
    insertion_speed,
    integrate,
    spawn_step,
)
from .metrics import ControlRecord, MetricsReport, RoutingRecord, RunTrace, compute_report
from .net import RoadNetwork, build_grid
from .reward import RewardWeights, decision_reward
from .routing import (
    CoordinatorConfig,
    CoverageCoordinator,
    RerouteConfig,
    consider_reroute,
    routing_rng,
)

log = logging.getLogger(__name__)

#: Car-following look-ahead along the planned path, m.
LOOKAHEAD = 120.0
#: Minimum bumper gap enforced by the position update, m.
MIN_GAP = 0.5
#: Ungranted vehicles halt this far short of the stop line, m.
STOP_LINE_MARGIN = 0.01
#: A stop-line obstacle sits this far past the line, so IDM halts about s0 - offset before it.
VIRTUAL_OFFSET = 1.5

STREAM_SPAWN = 1
STREAM_POLICY = 2


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce a run, apart from the seed.

    Either ``grid`` (rows, cols) or ``network`` (junction/edge tables, see
    :mod:`mixtraffic.scenario`) defines the road graph.  ``demand`` lists
    ``{"origin", "destination", "rate", "rv_rate"?}`` entries with edge ids;
    when omitted on a grid, every boundary entry sends ``demand_rate`` veh/s
    spread evenly over all other boundary exits.
    """

    grid: tuple[int, int] | None = (3, 3)
    edge_length: float = 100.0
    speed_limit: float = 13.9
    network: dict | None = None
    demand: list[dict] | None = None
    demand_rate: float = 0.02
    rv_rate: float = 0.6
    horizon: float = 1000.0
    window: tuple[float, float] = (500.0, 1000.0)
    dt: float = 1.0
    seeds: int = 10
    routing: bool = True
    policy: str = "heuristic"
    checkpoint: str | None = None
    theta_go: float = 0.2
    zone: ControlZoneConfig = field(default_factory=ControlZoneConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    coordinator: CoordinatorConfig = field(default_factory=CoordinatorConfig)
    reroute: RerouteConfig = field(default_factory=RerouteConfig)
    idm: IdmParams = field(default_factory=IdmParams)

    def validate(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.rv_rate <= 1.0:
            raise ValueError("rv_rate must lie in [0, 1]")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        t0, t1 = self.window
        if not (0.0 <= t0 < t1 <= self.horizon):
            raise ValueError(f"window {self.window} must lie inside [0, horizon={self.horizon}]")
        if (self.grid is None) == (self.network is None):
            raise ValueError("exactly one of grid / network must be given")
        if self.policy not in ("heuristic", "random", "always-go", "checkpoint", "train"):
            raise ValueError(f"unknown policy source {self.policy!r}")
        if self.policy == "checkpoint" and not self.checkpoint:
            raise ValueError("policy 'checkpoint' needs a checkpoint path")
        if self.demand_rate < 0:
            raise ValueError("demand_rate must be >= 0")

    def build_network(self) -> RoadNetwork:
        if self.grid is not None:
            rows, cols = self.grid
            return build_grid(rows, cols, self.edge_length, self.speed_limit)
        from .scenario import network_from_dict

        return network_from_dict(self.network)

    def build_demand(self, net: RoadNetwork) -> list[Demand]:
        if self.demand is not None:
            out = []
            for d in self.demand:
                rate = float(d["rate"])
                if not 0.0 <= rate * self.dt <= 1.0:
                    raise ValueError(f"demand rate {rate} veh/s is not a per-step probability at dt={self.dt}")
                rv = d.get("rv_rate")
                out.append(Demand(net.edge_index[d["origin"]], net.edge_index[d["destination"]], rate, None if rv is None else float(rv)))
            return out
        sources, sinks = net.source_edges, net.sink_edges
        out = []
        for o in sources:
            stub = net.edges[o].source
            dests = [s for s in sinks if net.edges[s].target != stub]
            for d in dests:
                out.append(Demand(o, d, self.demand_rate / len(dests)))
        return out

    @property
    def p_target(self) -> float:
        return self.coordinator.target_for(self.rv_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        if self.grid is not None:
            d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        nested = {
            "zone": ControlZoneConfig,
            "reward": RewardWeights,
            "coordinator": CoordinatorConfig,
            "reroute": RerouteConfig,
            "idm": IdmParams,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for k, v in d.items():
            if k in nested and isinstance(v, dict):
                if k == "zone" and v.get("cell_weights") is not None:
                    v = {**v, "cell_weights": tuple(v["cell_weights"])}
                kw[k] = nested[k](**v)
            elif k in ("grid", "window") and v is not None:
                kw[k] = tuple(v)
            else:
                kw[k] = v
        return cls(**kw)


def make_policy(config: ScenarioConfig) -> Policy:
    if config.policy == "heuristic":
        return HeuristicPolicy(config.theta_go)
    if config.policy == "random":
        return RandomPolicy()
    if config.policy == "always-go":
        return AlwaysGoPolicy()
    if config.policy == "checkpoint":
        return load_checkpoint(config.checkpoint)
    raise ValueError("policy 'train' is resolved by the train command, not by run()")


class Simulation:
    """One seeded run of a scenario.

    Parameters
    ----------
    config : ScenarioConfig
    seed : int
        Root seed; spawn, policy and routing draw from separate named streams.
    policy : Policy, optional
        Decides for every queue-leading RV.  Defaults to ``make_policy(config)``.
    sink : object, optional
        Receives ``on_decision(t, vehicle, obs, action, reward, terminal)`` per RV decision.
    """

    def __init__(
        self,
        config: ScenarioConfig,
        seed: int,
        policy: Policy | None = None,
        sink=None,
        net: RoadNetwork | None = None,
        record_trajectories: bool = False,
        record_cost_maps: bool = False,
        record_rewards: bool = False,
    ):
        config.validate()
        self.config = config
        self.seed = int(seed)
        self.net = net if net is not None else config.build_network()
        self.demand = config.build_demand(self.net)
        self.policy = policy if policy is not None else make_policy(config)
        self.sink = sink
        self.rng_spawn = np.random.default_rng([self.seed, STREAM_SPAWN])
        self.rng_policy = np.random.default_rng([self.seed, STREAM_POLICY])
        self.controllers = [IntersectionController(i, self.net.conflicts) for i in self.net.intersections]
        self.coordinator = CoverageCoordinator(self.net, config.coordinator, config.p_target)
        self.cost_map = None
        self.vehicles: list[Vehicle] = []
        self.pending: dict[int, list[Vehicle]] = {}
        self.routes: dict = {}
        self.next_id = 0
        self.step_index = 0
        self.time = 0.0
        self.on_edge: dict[int, list[Vehicle]] = {}
        self.on_movement: dict[int, list[Vehicle]] = {}
        self._commands: dict[int, tuple] = {}

        net = self.net
        self.trace = RunTrace(dt=config.dt, n_intersections=len(net.intersections))
        self.trace.trajectories = [] if record_trajectories else None
        self.trace.cost_maps = [] if record_cost_maps else None
        self.trace.reward_log = [] if (record_rewards or sink is not None) else None
        self._approach_cols: dict[int, int] = {}
        for inter in net.intersections:
            for k, e in sorted(inter.approaches.items()):
                self._approach_cols[e] = len(self.trace.approach_labels)
                self.trace.approach_labels.append(f"{inter.junction}:{k}")
        self._siblings = {e: [m for m in net.movements if m.in_edge == e] for e in range(len(net.edges))}
        self._edge_len = [e.length for e in net.edges]
        self._edge_limit = [e.speed_limit for e in net.edges]
        self._inter_of_edge = [net.intersection_of_edge(e) for e in range(len(net.edges))]

    # -- bookkeeping -------------------------------------------------------------

    def _index_links(self) -> None:
        on_edge: dict[int, list[Vehicle]] = {}
        on_mv: dict[int, list[Vehicle]] = {}
        for v in self.vehicles:
            if v.movement is None:
                on_edge.setdefault(v.edge, []).append(v)
            else:
                on_mv.setdefault(v.movement.index, []).append(v)
        for d in (on_edge, on_mv):
            for lst in d.values():
                lst.sort(key=lambda x: (-x.pos, x.id))
                for r, v in enumerate(lst):
                    v._rank = r
        self.on_edge, self.on_movement = on_edge, on_mv

    def _spawn(self, t: float) -> None:
        cfg = self.config
        new = spawn_step(self.net, self.demand, cfg.rv_rate, self.rng_spawn, t, cfg.dt, self.next_id, self.routes)
        self.next_id += len(new)
        for v in new:
            self.pending.setdefault(v.route.edges[0], []).append(v)
        for e in sorted(self.pending):
            queue = self.pending[e]
            if not queue:
                continue
            lst = self.on_edge.setdefault(e, [])
            rear = lst[-1] if lst else None
            headroom = math.inf if rear is None else rear.pos - VEHICLE_LENGTH
            speed = insertion_speed(headroom, self._edge_limit[e], cfg.idm)
            if speed is None:
                continue
            v = queue.pop(0)
            v.speed = speed
            v.spawn_time = t
            v._rank = len(lst)
            lst.append(v)
            self.vehicles.append(v)
            self.trace.spawns.append((t, v.id, v.cls.value))

    def _leader(self, v: Vehicle) -> tuple[float, float]:
        """Gap to and speed of the first vehicle ahead on the planned path."""
        L = VEHICLE_LENGTH
        if v.movement is None:
            lst = self.on_edge[v.edge]
            length = self._edge_len[v.edge]
        else:
            lst = self.on_movement[v.movement.index]
            length = v.movement.length
        r = v._rank
        if r > 0:
            ld = lst[r - 1]
            return ld.pos - L - v.pos, ld.speed
        dist = length - v.pos
        edges = v.route.edges
        i = v.route_index
        if v.movement is None:
            if i + 1 >= len(edges):
                return math.inf, 0.0
            best = None
            for m in self._siblings[v.edge]:
                ml = self.on_movement.get(m.index)
                if ml and (best is None or ml[-1].pos < best.pos):
                    best = ml[-1]
            if best is not None:
                return dist + best.pos - L, best.speed
            dist += self.net.movement_between(edges[i], edges[i + 1]).length
        i += 1
        while dist < LOOKAHEAD:
            e = edges[i]
            el = self.on_edge.get(e)
            if el:
                return dist + el[-1].pos - L, el[-1].speed
            dist += self._edge_len[e]
            if i + 1 >= len(edges) or dist >= LOOKAHEAD:
                break
            m = self.net.movement_between(e, edges[i + 1])
            ml = self.on_movement.get(m.index)
            if ml:
                return dist + ml[-1].pos - L, ml[-1].speed
            dist += m.length
            i += 1
        return math.inf, 0.0

    def _exit_blocked(self, movement) -> bool:
        out = movement.out_edge
        lst = self.on_edge.get(out)
        rear = lst[-1].pos if lst else math.inf
        ctrl = self.controllers[self.net.intersection_at[movement.junction]]
        movements = self.net.movements
        queued = sum(1 for m in ctrl.grants.values() if movements[m].out_edge == out)
        need = (VEHICLE_LENGTH + self.config.idm.s0) * (1 + queued)
        return rear < need

    # -- step phases ---------------------------------------------------------------

    def _route(self, t: float) -> None:
        cfg = self.config
        self.cost_map = self.coordinator.update(self.on_edge, t)
        cm = self.cost_map
        self.trace.shortage.append((t, cm.generation, cm.total_shortage))
        if self.trace.cost_maps is not None:
            self.trace.cost_maps.append((t, cm.generation, cm.costs.copy()))
        if not cfg.routing:
            return
        for v in self.vehicles:
            if not v.is_rv:
                continue
            out = consider_reroute(v, cm, self.net, cfg.reroute, routing_rng(self.seed, v.id, cm.generation), t, cfg.dt)
            if out.eligible:
                self.trace.routing_log.append(
                    RoutingRecord(t, v.id, True, out.gated, out.candidate_cost, v.base_cost, out.adopted)
                )

    def _decide(self, t: float) -> None:
        cfg = self.config
        net = self.net
        dt = cfg.dt
        a_max = cfg.idm.a_max
        commands = self._commands = {}
        for ctrl in self.controllers:
            inter = ctrl.inter
            snap = take_snapshot(net, inter, self.on_edge, ctrl, cfg.zone)
            if not snap.leaders:
                continue
            requests = []
            decisions = []
            for k, v in sorted(snap.leaders.items()):
                nxt = v.next_edge
                m = net.movement_between(v.edge, nxt)
                d = self._edge_len[v.edge] - v.pos
                if v.is_rv:
                    obs = build_observation(snap, k, cfg.zone)
                    action = Action(self.policy.act(obs, self.rng_policy))
                    if action == Action.GO and self._exit_blocked(m):
                        commands[v.id] = ("hold",)
                        decisions.append((v, k, obs, action, None))
                    elif action == Action.GO:
                        requests.append((v, m.index))
                        decisions.append((v, k, obs, action, m.index))
                    else:
                        commands[v.id] = ("stop",)
                        decisions.append((v, k, obs, action, None))
                else:
                    reach = v.speed * dt + 0.5 * a_max * dt * dt + 1.0
                    if ctrl.blocked(m.index) or self._exit_blocked(m):
                        commands[v.id] = ("hold",)
                    elif d <= reach:
                        requests.append((v, m.index))
            granted = ctrl.resolve(requests) if requests else {}
            for v, _m in requests:
                if granted[v.id]:
                    v.granted = True
                    commands.pop(v.id, None)
                elif v.is_rv:
                    commands[v.id] = ("stop",)
                else:
                    commands[v.id] = ("hold",)
            for v, k, obs, action, m in decisions:
                overridden = m is not None and not granted[v.id]
                self.trace.control_log.append(
                    ControlRecord(t, inter.index, v.id, action.name.capitalize(), overridden, float(obs.threat[k]))
                )
                if self.trace.reward_log is not None:
                    rb = decision_reward(obs, action, cfg.reward, overridden)
                    self.trace.reward_log.append((t, inter.index, v.id, action.name.capitalize(), rb))
                    if self.sink is not None:
                        self.sink.on_decision(t, v.id, obs, action, rb, m is not None and granted[v.id])

    def _accelerations(self) -> list[tuple[Vehicle, float, float]]:
        cfg = self.config
        idm = cfg.idm
        plan = []
        min_gap = self.trace.min_gap
        for v in self.vehicles:
            gap, lead_speed = self._leader(v)
            if gap < min_gap:
                min_gap = gap
            v0 = self._edge_limit[v.edge]
            a = idm_accel(v.speed, gap, lead_speed, idm, v0)
            max_adv = gap - MIN_GAP
            if v.movement is None and not v.granted and self._inter_of_edge[v.edge] is not None:
                d = self._edge_len[v.edge] - v.pos
                cmd = self._commands.get(v.id)
                if cmd is not None and cmd[0] == "stop":
                    a = apply_action(v.speed, Action.STOP, d, idm.a_max, a)
                elif cmd is not None or not v.is_rv:
                    # held vehicles and unadmitted HVs yield as if at a stop sign
                    a = min(a, idm_accel(v.speed, max(d, 0.0) + VIRTUAL_OFFSET, 0.0, idm, v0))
                max_adv = min(max_adv, d - STOP_LINE_MARGIN)
            elif v.granted and v.is_rv and v.movement is None:
                a = apply_action(v.speed, Action.GO, 0.0, idm.a_max, a)
            plan.append((v, a, max_adv))
        self.trace.min_gap = min_gap
        return plan

    def _integrate(self, plan, t: float) -> None:
        cfg = self.config
        net = self.net
        finished = []
        for v, a, max_adv in plan:
            events = integrate(v, a, cfg.dt, net, t, max_adv)
            for ev in events:
                kind = ev[0]
                if kind == "exit":
                    m = ev[1]
                    ctrl = self.controllers[net.intersection_at[m.junction]]
                    ctrl.release(v.id)
                    self.trace.crossings.append((t, ctrl.inter.index, v.id))
                elif kind == "enter":
                    m = ev[1]
                    ctrl = self.controllers[net.intersection_at[m.junction]]
                    if ctrl.grants.get(v.id) != m.index:
                        raise SimulationError(f"vehicle {v.id} entered junction {m.junction} without a grant")
                elif kind == "done":
                    free = sum(net.edges[e].free_flow_time for e in v.route.edges)
                    self.trace.completions.append((t, v.id, v.finish_time - v.spawn_time, free))
                    finished.append(v)
        if finished:
            done = {v.id for v in finished}
            self.vehicles = [v for v in self.vehicles if v.id not in done]

    def _capture(self, t: float) -> None:
        cfg = self.config
        dt = cfg.dt
        radius = cfg.zone.radius
        trace = self.trace
        n_cols = len(trace.approach_labels)
        sums = np.zeros(n_cols)
        counts = np.zeros(n_cols)
        interior: dict[int, list[tuple[int, int]]] = {}
        for v in self.vehicles:
            stopped = v.speed < STOP_SPEED
            if v.movement is not None:
                trace.zone_rows.append((t, v.id, v.speed, v.accel, stopped))
                interior.setdefault(self.net.intersection_at[v.movement.junction], []).append((v.id, v.movement.index))
            else:
                col = self._approach_cols.get(v.edge)
                if col is not None and self._edge_len[v.edge] - v.pos <= radius:
                    trace.zone_rows.append((t, v.id, v.speed, v.accel, stopped))
                    if stopped:
                        v.zone_wait += dt
                        sums[col] += v.zone_wait
                        counts[col] += 1
            if trace.trajectories is not None:
                loc = f"@{v.movement.index}" if v.movement is not None else self.net.edges[v.edge].id
                trace.trajectories.append((t, v.id, v.cls.value, loc, v.pos, v.speed, v.accel))
        trace.approach_times.append(t)
        trace.approach_waits.append(np.divide(sums, counts, out=np.zeros(n_cols), where=counts > 0))
        conflicts = self.net.conflicts
        for j, occ in interior.items():
            for i, (va, ma) in enumerate(occ):
                ca = conflicts[ma]
                for vb, mb in occ[i + 1:]:
                    if mb in ca:
                        trace.violations.append((t, j, va, vb))

    def step(self) -> None:
        cfg = self.config
        t = self.time
        self._index_links()
        self._spawn(t)
        interval = cfg.coordinator.update_interval
        if self.step_index > 0 and self.step_index % interval == 0:
            self._route(t)
        self._decide(t)
        plan = self._accelerations()
        self._integrate(plan, t)
        self._capture(t)
        self.step_index += 1
        self.time = self.step_index * cfg.dt

    def run(self) -> tuple[MetricsReport, RunTrace]:
        n_steps = int(round(self.config.horizon / self.config.dt))
        for _ in range(n_steps):
            self.step()
        return compute_report(self.trace, self.config.window), self.trace


def run(config: ScenarioConfig, seed: int, policy: Policy | None = None, **kwargs) -> tuple[MetricsReport, RunTrace]:
    """Run one scenario to its horizon and evaluate it over ``config.window``."""
    return Simulation(config, seed, policy=policy, **kwargs).run()


def with_overrides(config: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(config, **changes)


@dataclass
class SweepCell:
    rv_rate: float
    seed: int
    report: MetricsReport | None
    error: str | None = None


def sweep(base: ScenarioConfig, rv_rates: list[float], seeds: list[int], policy: Policy | None = None, on_cell=None) -> list[SweepCell]:
    """Run the (rate, seed) cross product; a failing cell is recorded and skipped."""
    if not rv_rates or not seeds:
        raise ValueError("rv_rates and seeds must be non-empty")
    net = base.build_network()
    cells = []
    for rate in rv_rates:
        cfg = replace(base, rv_rate=float(rate))
        for seed in seeds:
            try:
                report, _ = Simulation(cfg, seed, policy=policy, net=net).run()
                cell = SweepCell(float(rate), int(seed), report)
            except (SimulationError, ValueError, FloatingPointError) as exc:
                log.warning("rv_rate=%s seed=%s failed: %s", rate, seed, exc)
                cell = SweepCell(float(rate), int(seed), None, f"{type(exc).__name__}: {exc}")
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    return cells


def aggregate(cells: list[SweepCell]) -> dict[float, dict[str, tuple[float | None, float | None, int]]]:
    """Per rate and metric: (mean, population std, sample count) over successful seeds.

    Seeds are summed in sorted order so the result does not depend on run order.
    """
    out: dict[float, dict] = {}
    for rate in sorted({c.rv_rate for c in cells}):
        ok = sorted((c for c in cells if c.rv_rate == rate and c.report is not None), key=lambda c: c.seed)
        row = {}
        for name in MetricsReport.metric_names():
            vals = [getattr(c.report, name) for c in ok]
            vals = np.array([x for x in vals if x is not None], dtype=float)
            if vals.size == 0:
                row[name] = (None, None, 0)
            else:
                row[name] = (float(vals.mean()), float(vals.std()), int(vals.size))
        row["failures"] = sum(1 for c in cells if c.rv_rate == rate and c.report is None)
        out[rate] = row
    return out
