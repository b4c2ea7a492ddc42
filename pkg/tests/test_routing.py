import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixtraffic.dynamics import Vehicle, VehicleClass
from mixtraffic.net import build_grid, route_cost, shortest_path
from mixtraffic.routing import (
    CoordinatorConfig,
    CoverageCoordinator,
    CostMap,
    RerouteConfig,
    adjust_costs,
    consider_reroute,
    measure_coverage,
    predict,
    routing_rng,
    shortage,
    trend,
)

from oracles import ols_slope


def _v(vid, cls, net=None, route=None, pos=0.0):
    net = net or build_grid(1, 1)
    route = route or net.route_from_edges([net.edge_index["N0->J0_0"], net.edge_index["J0_0->S0"]])
    return Vehicle(vid, cls, route, route.base_cost, 0.0, pos=pos)


RV, HV = VehicleClass.RV, VehicleClass.HV


def test_coverage_ratio():
    assert measure_coverage([_v(0, RV), _v(1, RV), _v(2, HV), _v(3, HV)]) == 0.5
    assert measure_coverage([_v(0, RV), _v(1, RV)]) == 1.0
    assert measure_coverage([]) is None


def test_empty_edge_holds_history():
    net = build_grid(1, 1)
    coord = CoverageCoordinator(net, CoordinatorConfig(), 0.55)
    e = net.edge_index["N0->J0_0"]
    coord.update({e: [_v(0, RV), _v(1, HV)]}, 60.0)
    before = list(coord.history[e])
    coord.update({}, 120.0)
    assert list(coord.history[e]) == before == [0.5]


def test_trend_examples():
    assert trend([0.4] * 5) == 0.0
    assert trend([0.2, 0.3, 0.4, 0.5, 0.6]) == pytest.approx(0.1, abs=1e-15)
    assert trend([0.6, 0.5, 0.4, 0.3, 0.2]) == pytest.approx(-0.1, abs=1e-15)
    with pytest.raises(ValueError):
        trend([0.5])


def test_predict_examples():
    assert predict(0.4, 0.0, 3) == 0.4
    assert predict(0.6, 0.1, 3) == pytest.approx(0.9, abs=1e-15)
    assert predict(0.9, 0.1, 3) == 1.0


def test_shortage_examples():
    assert shortage(0.7, 0.55) == 0.0
    assert shortage(0.4, 0.55) == pytest.approx(0.15, abs=1e-15)
    assert shortage(0.0, 0.55) == 0.55


def test_adjust_examples():
    base = np.array([100.0, 100.0, 50.0])
    assert np.array_equal(adjust_costs(base, np.zeros(3), 1.0).costs, base)
    cm = adjust_costs(base, np.array([0.3, 0.1, 0.0]), 1.0)
    assert cm.costs[0] == pytest.approx(70.0, abs=1e-12)
    assert cm.costs[0] < cm.costs[1]


def test_adjust_rejects_nonpositive():
    with pytest.raises(ValueError):
        adjust_costs(np.array([100.0]), np.array([0.5]), 2.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_trend_matches_closed_form(ys):
    assert trend(ys) == pytest.approx(ols_slope(ys), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.0, 1.0), st.floats(1, 1000))
def test_shortage_and_cost_monotone(p1, p2, target, alpha, tau):
    lo, hi = sorted((p1, p2))
    s_lo, s_hi = shortage(lo, target), shortage(hi, target)
    assert s_lo >= s_hi
    assert 0.0 <= s_hi <= s_lo <= target
    if alpha * target < 1:
        c = adjust_costs(np.array([tau, tau]), np.array([s_lo, s_hi]), alpha).costs
        assert c[0] <= c[1] <= tau
        assert c[0] >= tau * (1 - alpha * target) - 1e-9


def test_coordinator_touches_each_edge_once():
    net = build_grid(2, 2)
    coord = CoverageCoordinator(net, CoordinatorConfig(), 0.55)
    coord.update({}, 60.0)
    assert coord.edge_visits == len(net.edges)
    coord.update({}, 120.0)
    assert coord.edge_visits == 2 * len(net.edges)


def test_coordinator_uses_trend_once_full():
    net = build_grid(1, 1)
    coord = CoverageCoordinator(net, CoordinatorConfig(window=3), 0.9)
    e = net.edge_index["N0->J0_0"]
    samples = [[RV, HV, HV, HV], [RV, RV, HV, HV], [RV, RV, RV, HV]]
    for i, s in enumerate(samples):
        cm = coord.update({e: [_v(j, c) for j, c in enumerate(s)]}, 60.0 * (i + 1))
    # slope 0.25 per sample, h = one interval -> p_hat = clip(0.75 + 0.25) = 1
    assert cm.shortage[e] == 0.0
    assert cm.generation == 3


def _rv_on_grid(pos=0.0, base_cost=None):
    net = build_grid(3, 3)
    o, d = net.edge_index["W0->J0_0"], net.edge_index["J2_2->S2"]
    r = shortest_path(net, o, d, net.baseline_costs)
    v = Vehicle(1, RV, r, r.base_cost if base_cost is None else base_cost, 0.0, pos=pos)
    return net, v


def _always(p=0.0):
    class R:
        def random(self):
            return p
    return R()


def test_reroute_adopts_within_bound():
    net, v = _rv_on_grid(base_cost=1000.0)
    # make the vehicle's current path expensive on the broadcast map
    costs = net.baseline_costs.copy()
    for e in v.route.edges[1:-1]:
        costs[e] *= 1.5
    cm = CostMap(costs, np.zeros(len(costs)), 1, 60.0)
    out = consider_reroute(v, cm, net, RerouteConfig(), _always(), 60.0)
    assert out.eligible and out.adopted
    assert out.candidate_cost <= 1.2 * 1000.0
    assert v.base_cost == 1000.0 and v.last_reroute == 60.0


def test_reroute_rejects_beyond_bound():
    # spawn-time cost 400 (fixed), best available route costs 600 > 1.2 * 400
    net, v = _rv_on_grid(base_cost=400.0)
    route_before = v.route
    cm = CostMap(net.baseline_costs, np.zeros(len(net.edges)), 1, 60.0)
    out = consider_reroute(v, cm, net, RerouteConfig(delta=1.2), _always(), 60.0)
    assert out.candidate_cost == 600.0
    assert not out.adopted and v.route is route_before and v.reroutes == 0


@pytest.mark.parametrize("candidate,adopt", [(1150.0, True), (1250.0, False)])
def test_detour_ratio_threshold(candidate, adopt, monkeypatch):
    net, v = _rv_on_grid(base_cost=1000.0)
    import mixtraffic.routing as routing

    fake = v.route
    monkeypatch.setattr(routing, "route_cost", lambda r, c: candidate)
    monkeypatch.setattr(routing, "shortest_path", lambda *a: fake)
    out = consider_reroute(v, CostMap(net.baseline_costs, np.zeros(len(net.edges)), 1, 60.0), net, RerouteConfig(), _always(), 60.0)
    assert out.adopted is adopt


def test_cooldown_blocks_regardless_of_rng():
    net, v = _rv_on_grid()
    v.last_reroute = 50.0
    cm = CostMap(net.baseline_costs, np.zeros(len(net.edges)), 1, 60.0)
    out = consider_reroute(v, cm, net, RerouteConfig(cooldown=60), _always(0.0), 60.0)
    assert not out.eligible


def test_commitment_distance_and_gate():
    net, v = _rv_on_grid(pos=60.0)
    cm = CostMap(net.baseline_costs, np.zeros(len(net.edges)), 1, 60.0)
    assert not consider_reroute(v, cm, net, RerouteConfig(), _always(0.0), 60.0).eligible
    net, v = _rv_on_grid(pos=0.0)
    out = consider_reroute(v, cm, net, RerouteConfig(rho=0.15), _always(0.5), 60.0)
    assert out.eligible and out.gated and not out.adopted


def test_hv_never_eligible():
    net, v = _rv_on_grid()
    v.cls = HV
    cm = CostMap(net.baseline_costs, np.zeros(len(net.edges)), 1, 60.0)
    assert not consider_reroute(v, cm, net, RerouteConfig(), _always(0.0), 60.0).eligible


def test_adopted_route_keeps_traversed_prefix():
    net = build_grid(3, 3)
    o, d = net.edge_index["W0->J0_0"], net.edge_index["J2_2->S2"]
    r = shortest_path(net, o, d, net.baseline_costs)
    v = Vehicle(1, RV, r, r.base_cost, 0.0, route_index=1)
    costs = net.baseline_costs.copy()
    for e in r.edges[2:-1]:
        costs[e] *= 1.5
    out = consider_reroute(v, CostMap(costs, np.zeros(len(costs)), 1, 60.0), net, RerouteConfig(), _always(), 60.0)
    assert out.adopted
    assert v.route.edges[:2] == r.edges[:2] and v.route.edges[-1] == d


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.9), st.floats(1.01, 2.0))
def test_detour_bound_property(seed, s_max, delta):
    net = build_grid(3, 3)
    rng = np.random.default_rng(seed)
    src, dst = net.source_edges, net.sink_edges
    o, d = int(rng.choice(src)), int(rng.choice(dst))
    if net.edges[o].source == net.edges[d].target:
        return
    r = shortest_path(net, o, d, net.baseline_costs)
    v = Vehicle(1, RV, r, r.base_cost, 0.0)
    cm = adjust_costs(net.baseline_costs, rng.uniform(0, s_max, len(net.edges)), 1.0)
    out = consider_reroute(v, cm, net, RerouteConfig(rho=1.0, delta=delta), rng, 60.0)
    if out.adopted:
        assert route_cost(v.route, net.baseline_costs) <= delta * r.base_cost + 1e-9


def test_routing_rng_order_independent():
    a = routing_rng(3, 10, 2).random()
    routing_rng(3, 11, 2).random()
    assert routing_rng(3, 10, 2).random() == a
    assert routing_rng(3, 10, 3).random() != a


def test_config_validation():
    with pytest.raises(ValueError):
        RerouteConfig(delta=1.0)
    with pytest.raises(ValueError):
        RerouteConfig(rho=1.5)
    with pytest.raises(ValueError):
        CoordinatorConfig(alpha=-1)
    assert CoordinatorConfig().target_for(0.6) == pytest.approx(0.55)
    assert CoordinatorConfig().steps_ahead == 60.0
