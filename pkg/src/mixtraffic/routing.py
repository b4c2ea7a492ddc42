"""Coverage-aware routing: the broadcasting coordinator and per-RV rerouting."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import Vehicle
from .net import NoRouteError, RoadNetwork, Route, route_cost, shortest_path


@dataclass(frozen=True)
class CoordinatorConfig:
    """Coordinator knobs.

    ``p_target`` of ``None`` resolves to ``rv_rate - 0.05`` at run time.
    ``horizon`` and ``update_interval`` are in simulation steps; ``horizon``
    of ``None`` means one update interval.
    """

    alpha: float = 1.0
    p_target: float | None = None
    horizon: float | None = None
    update_interval: int = 60
    window: int = 5

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.p_target is not None and not 0.0 <= self.p_target <= 1.0:
            raise ValueError("p_target must lie in [0, 1]")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.update_interval < 1 or self.window < 2:
            raise ValueError("update_interval must be >= 1 and window >= 2")

    def target_for(self, rv_rate: float) -> float:
        if self.p_target is not None:
            return self.p_target
        return min(1.0, max(0.0, rv_rate - 0.05))

    @property
    def steps_ahead(self) -> float:
        return float(self.update_interval if self.horizon is None else self.horizon)


@dataclass(frozen=True)
class RerouteConfig:
    rho: float = 0.15
    delta: float = 1.20
    cooldown: int = 60
    commitment_distance: float = 50.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not self.delta > 1.0:
            raise ValueError("delta must be > 1")
        if self.cooldown < 0 or self.commitment_distance < 0:
            raise ValueError("cooldown and commitment_distance must be >= 0")


@dataclass(frozen=True)
class CostMap:
    costs: np.ndarray
    shortage: np.ndarray
    generation: int
    time: float

    @property
    def total_shortage(self) -> float:
        return float(self.shortage.sum())


def measure_coverage(vehicles: Iterable[Vehicle]) -> float | None:
    """RV share of the vehicles on an edge; ``None`` for an empty edge."""
    n = rv = 0
    for v in vehicles:
        n += 1
        rv += v.is_rv
    return None if n == 0 else rv / n


def trend(history: Sequence[float]) -> float:
    """Least-squares slope of the samples against their index."""
    y = np.asarray(history, dtype=float)
    n = y.size
    if n < 2:
        raise ValueError("need at least two samples for a slope")
    x = np.arange(n, dtype=float)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def predict(p_now: float, slope: float, horizon: float) -> float:
    return min(1.0, max(0.0, p_now + slope * horizon))


def shortage(p_hat: float, p_target: float) -> float:
    return max(0.0, p_target - p_hat)


def adjust_costs(baseline: np.ndarray, shortages: np.ndarray, alpha: float, generation: int = 0, time: float = 0.0) -> CostMap:
    tau = np.asarray(baseline, dtype=float)
    s = np.asarray(shortages, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("baseline costs must be > 0")
    adjusted = tau - alpha * s * tau
    if np.any(adjusted <= 0):
        raise ValueError(f"alpha={alpha} with shortage up to {s.max():.3f} drives edge costs to <= 0")
    return CostMap(adjusted, s.copy(), generation, time)


class CoverageCoordinator:
    """Keeps a sliding coverage history per edge and emits adjusted cost maps."""

    def __init__(self, net: RoadNetwork, cfg: CoordinatorConfig, p_target: float):
        self.net = net
        self.cfg = cfg
        self.p_target = p_target
        self.history = [deque(maxlen=cfg.window) for _ in net.edges]
        self.generation = 0
        self.edge_visits = 0

    def update(self, edge_vehicles: dict[int, list[Vehicle]], now: float) -> CostMap:
        cfg = self.cfg
        # history samples are update_interval steps apart; convert slope to per step
        h = cfg.steps_ahead / cfg.update_interval
        shortages = np.zeros(len(self.net.edges))
        for e in range(len(self.net.edges)):
            self.edge_visits += 1
            hist = self.history[e]
            p = measure_coverage(edge_vehicles.get(e, ()))
            if p is not None:
                hist.append(p)
            if not hist:
                continue
            p_now = hist[-1]
            p_hat = predict(p_now, trend(hist), h) if len(hist) == cfg.window else p_now
            shortages[e] = shortage(p_hat, self.p_target)
        self.generation += 1
        return adjust_costs(self.net.baseline_costs, shortages, cfg.alpha, self.generation, now)


@dataclass
class RerouteOutcome:
    eligible: bool
    gated: bool = False
    candidate_cost: float | None = None
    adopted: bool = False
    route: Route | None = None


def is_eligible(net: RoadNetwork, v: Vehicle, cfg: RerouteConfig, now: float, dt: float = 1.0) -> bool:
    if not v.is_rv or v.completed or v.movement is not None:
        return False
    if v.next_edge is None:
        return False
    if now - v.last_reroute < cfg.cooldown * dt:
        return False
    return net.edges[v.edge].length - v.pos >= cfg.commitment_distance


def consider_reroute(
    v: Vehicle,
    cost_map: CostMap,
    net: RoadNetwork,
    cfg: RerouteConfig,
    rng: np.random.Generator,
    now: float,
    dt: float = 1.0,
) -> RerouteOutcome:
    """Gate, search under the broadcast costs, verify against baseline costs, adopt.

    The vehicle's route is replaced in place on adoption; nothing is reported
    back to the coordinator.
    """
    if not is_eligible(net, v, cfg, now, dt):
        return RerouteOutcome(eligible=False)
    if rng.random() > cfg.rho:
        return RerouteOutcome(eligible=True, gated=True)
    try:
        cand = shortest_path(net, v.edge, v.destination, cost_map.costs)
    except NoRouteError:
        return RerouteOutcome(eligible=True)
    c_new = route_cost(cand, net.baseline_costs)
    out = RerouteOutcome(eligible=True, candidate_cost=c_new)
    if c_new <= cfg.delta * v.base_cost:
        prefix = v.route.edges[: v.route_index]
        v.route = Route(prefix + cand.edges, float(sum(net.edges[e].length for e in prefix + cand.edges)))
        v.last_reroute = now
        v.reroutes += 1
        out.adopted = True
        out.route = cand
    return out


def routing_rng(seed: int, vehicle_id: int, generation: int) -> np.random.Generator:
    """Per-vehicle, per-broadcast stream so decisions do not depend on evaluation order."""
    return np.random.default_rng([seed, 0x5EED, vehicle_id, generation])

