"""Evaluation metrics over a steady-state measurement window.

Every metric is a pure function of a :class:`RunTrace` and a half-open
window ``[t0, t1)``; events stamped outside the window are ignored.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

STARVATION_THRESHOLD = 60.0
THROUGHPUT_PERIOD = 500.0

# Surrogate fuel polynomial, ml/s: idle, rolling, aero, and inertial terms.
FUEL_IDLE = 0.35
FUEL_LINEAR = 0.03
FUEL_CUBIC = 2.5e-5
FUEL_ACCEL = 0.1


def fuel_rate(speed, accel):
    """Instantaneous surrogate fuel rate in ml/s (vectorised)."""
    v = np.asarray(speed, dtype=float)
    a = np.asarray(accel, dtype=float)
    # smallest terms first
    r = FUEL_ACCEL * np.maximum(0.0, a) * v + FUEL_CUBIC * v**3 + FUEL_LINEAR * v + FUEL_IDLE
    return np.maximum(0.0, r)


@dataclass
class ControlRecord:
    t: float
    intersection: int
    vehicle: int
    action: str
    overridden: bool
    threat: float


@dataclass
class RoutingRecord:
    t: float
    vehicle: int
    eligible: bool
    gated: bool
    candidate_cost: float | None
    baseline_cost: float
    adopted: bool


@dataclass
class RunTrace:
    """Event streams captured by one simulation run.

    ``zone_rows`` holds one ``(t, vehicle, speed, accel, stopped)`` row per
    vehicle per step spent inside a control zone or junction interior.
    ``approach_waits`` is the per-step mean wait of the halted vehicles of
    each intersection approach (0 when none are halted).
    """

    dt: float = 1.0
    n_intersections: int = 0
    zone_rows: list[tuple] = field(default_factory=list)
    crossings: list[tuple] = field(default_factory=list)
    #: (t, vehicle, travel_time, free_flow_time)
    completions: list[tuple] = field(default_factory=list)
    #: (t, vehicle, class)
    spawns: list[tuple] = field(default_factory=list)
    approach_times: list[float] = field(default_factory=list)
    approach_waits: list[np.ndarray] = field(default_factory=list)
    approach_labels: list[str] = field(default_factory=list)
    control_log: list[ControlRecord] = field(default_factory=list)
    routing_log: list[RoutingRecord] = field(default_factory=list)
    #: (t, generation, total predicted shortage)
    shortage: list[tuple] = field(default_factory=list)
    #: (t, intersection, vehicle a, vehicle b) interior co-occupancy by conflicting movements
    violations: list[tuple] = field(default_factory=list)
    min_gap: float = math.inf
    trajectories: list[tuple] | None = None
    cost_maps: list[tuple] | None = None
    reward_log: list[tuple] | None = None


@dataclass
class MetricsReport:
    """Window aggregates; ``None`` marks a metric with no underlying samples."""

    W_avg: float | None
    Theta_int: float
    Theta_net: float
    D_avg: float | None
    W_max: float
    W_p99: float | None
    C_rate: float | None
    F_avg: float | None
    window: tuple[float, float]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["window"] = tuple(d["window"])
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    @staticmethod
    def metric_names() -> list[str]:
        return [f.name for f in fields(MetricsReport) if f.name != "window"]


def _in(t, window) -> bool:
    return window[0] <= t < window[1]


def _check_window(window):
    t0, t1 = window
    if not t1 > t0:
        raise ValueError("window must satisfy t1 > t0")


def vehicle_waits(trace: RunTrace, window) -> dict[int, float]:
    """Stopped time inside control zones per vehicle seen in a zone during the window."""
    waits: dict[int, float] = {}
    dt = trace.dt
    for t, vid, _speed, _accel, stopped in trace.zone_rows:
        if _in(t, window):
            waits[vid] = waits.get(vid, 0.0) + (dt if stopped else 0.0)
    return waits


def avg_wait(trace: RunTrace, window) -> float | None:
    _check_window(window)
    waits = vehicle_waits(trace, window)
    if not waits:
        return None
    return float(sum(waits.values()) / len(waits))


def throughput(trace: RunTrace, window) -> tuple[float, float]:
    """Interior exits per intersection and completed trips, per 500 s."""
    _check_window(window)
    scale = THROUGHPUT_PERIOD / (window[1] - window[0])
    crossings = sum(1 for c in trace.crossings if _in(c[0], window))
    done = sum(1 for c in trace.completions if _in(c[0], window))
    per_int = crossings / trace.n_intersections if trace.n_intersections else 0.0
    return float(per_int * scale), float(done * scale)


def avg_delay(trace: RunTrace, window) -> float | None:
    _check_window(window)
    delays = [travel - free for t, _vid, travel, free in trace.completions if _in(t, window)]
    if not delays:
        return None
    return float(sum(delays) / len(delays))


def longest_run(flags: Sequence[bool]) -> int:
    best = cur = 0
    for f in flags:
        cur = cur + 1 if f else 0
        best = max(best, cur)
    return best


def max_starvation(times: Sequence[float], waits, window, dt: float = 1.0, threshold: float = STARVATION_THRESHOLD) -> float:
    """Longest in-window stretch, in seconds, that any approach's mean wait stays above ``threshold``."""
    _check_window(window)
    t = np.asarray(times, dtype=float)
    w = np.asarray(waits, dtype=float)
    if w.size == 0:
        return 0.0
    if w.ndim == 1:
        w = w[:, None]
    mask = (t >= window[0]) & (t < window[1])
    w = w[mask]
    if w.shape[0] == 0:
        return 0.0
    return float(max(longest_run(w[:, j] > threshold) for j in range(w.shape[1])) * dt)


def nearest_rank(values: Sequence[float], pct: float) -> float:
    xs = sorted(values)
    if not xs:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(pct / 100.0 * len(xs)))
    return float(xs[rank - 1])


def p99_wait(trace: RunTrace, window) -> float | None:
    _check_window(window)
    waits = vehicle_waits(trace, window)
    if not waits:
        return None
    return nearest_rank(list(waits.values()), 99.0)


def conflict_rate(control_log: Sequence[ControlRecord], window) -> float | None:
    """Share of RV Go decisions that the safety override turned into Stop."""
    _check_window(window)
    go = over = 0
    for rec in control_log:
        if rec.action == "Go" and _in(rec.t, window):
            go += 1
            over += bool(rec.overridden)
    if go == 0:
        return None
    return over / go


def fuel_avg(trace: RunTrace, window) -> float | None:
    _check_window(window)
    rows = [(s, a) for t, _vid, s, a, _st in trace.zone_rows if _in(t, window)]
    if not rows:
        return None
    s, a = zip(*rows)
    return float(np.mean(fuel_rate(s, a)))


def compute_report(trace: RunTrace, window) -> MetricsReport:
    theta_int, theta_net = throughput(trace, window)
    w = trace.approach_waits
    waits = np.vstack(w) if w else np.zeros((0, 0))
    return MetricsReport(
        W_avg=avg_wait(trace, window),
        Theta_int=theta_int,
        Theta_net=theta_net,
        D_avg=avg_delay(trace, window),
        W_max=max_starvation(trace.approach_times, waits, window, trace.dt),
        W_p99=p99_wait(trace, window),
        C_rate=conflict_rate(trace.control_log, window),
        F_avg=fuel_avg(trace, window),
        window=(float(window[0]), float(window[1])),
    )


def mean_shortage(trace: RunTrace, window) -> float | None:
    vals = [s for t, _g, s in trace.shortage if _in(t, window)]
    return float(np.mean(vals)) if vals else None
