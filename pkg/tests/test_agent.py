import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixtraffic.agent import (
    AlwaysGoPolicy,
    HeuristicPolicy,
    LinearQ,
    QPolicy,
    RandomPolicy,
    ReplayBuffer,
    TrainConfig,
    TrainingDiverged,
    act,
    feature_width,
    features,
    greedy,
    heuristic_act,
    load_checkpoint,
    save_checkpoint,
    td_update,
    train,
    Adam,
)
from mixtraffic.control import Action, ControlZoneConfig, Observation, observation_width
from mixtraffic.engine import ScenarioConfig, Simulation
from mixtraffic.net import N_SLOTS

CFG = ControlZoneConfig()
OBS_W = observation_width(CFG)
FEAT_W = feature_width(OBS_W)


def _obs(threat=0.0, interior=0.0, slot=0, queues=None):
    t = np.zeros(N_SLOTS)
    t[slot] = threat
    occ = np.zeros(N_SLOTS * (1 + CFG.c0))
    occ[slot * (1 + CFG.c0)] = interior
    q = np.zeros(N_SLOTS) if queues is None else np.asarray(queues, float)
    return Observation(q, np.zeros(N_SLOTS), t, occ, slot)


def test_feature_width_matches_observation():
    assert features(_obs()).shape == (FEAT_W,)


def test_heuristic_empty_intersection_goes():
    assert heuristic_act(_obs()) == Action.GO


def test_heuristic_full_threat_stops():
    assert heuristic_act(_obs(threat=1.0)) == Action.STOP


def test_heuristic_boundary_goes():
    assert heuristic_act(_obs(threat=0.2)) == Action.GO
    assert heuristic_act(_obs(threat=np.nextafter(0.2, 1.0))) == Action.STOP


def test_heuristic_interior_bit_stops():
    assert HeuristicPolicy().act(_obs(interior=1.0)) == Action.STOP


def test_argmax_picks_larger_value():
    q = LinearQ(FEAT_W)
    q.weights[Action.STOP, -1] = 1.0
    assert act(q, _obs()) == Action.STOP
    q.weights[Action.STOP, -1] = 0.0
    q.weights[Action.GO, -1] = 1.0
    assert act(q, _obs()) == Action.GO


def test_ties_break_to_stop():
    assert greedy(np.array([0.3, 0.3])) == Action.STOP
    assert act(LinearQ(FEAT_W), _obs()) == Action.STOP


def test_full_exploration_is_uniform():
    rng = np.random.default_rng(0)
    q = LinearQ(FEAT_W)
    n = 10_000
    go = sum(act(q, _obs(), explore=True, epsilon=1.0, rng=rng) == Action.GO for _ in range(n))
    assert abs(go / n - 0.5) <= 0.03


def test_exploration_needs_rng():
    with pytest.raises(ValueError):
        act(LinearQ(FEAT_W), _obs(), explore=True, epsilon=0.5)


def test_random_policy_is_uniform():
    rng = np.random.default_rng(1)
    go = sum(RandomPolicy().act(_obs(), rng) == Action.GO for _ in range(10_000))
    assert abs(go / 10_000 - 0.5) <= 0.03


def test_always_go():
    assert AlwaysGoPolicy().act(_obs(threat=1.0, interior=1.0)) == Action.GO


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.floats(1e-3, 1e3),
)
def test_positive_scaling_keeps_greedy_action(vals, c):
    v = np.array(vals)
    assert greedy(v) == greedy(c * v)


def test_epsilon_schedule_monotone():
    cfg = TrainConfig(iterations=100)
    eps = [cfg.epsilon(i) for i in range(100)]
    assert eps[0] == 1.0
    assert eps[-1] == pytest.approx(0.05)
    assert all(a >= b for a, b in zip(eps, eps[1:]))
    assert cfg.epsilon(50) == pytest.approx(0.05)


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"gamma": 0.0}, {"lr": -1e-3}, {"batch_size": 0}, {"target_sync": 0}])
def test_train_config_rejects(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_replay_sampling_reproducible():
    def filled(seed):
        buf = ReplayBuffer(32, 3, np.random.default_rng(seed))
        for i in range(50):
            buf.add(np.full(3, i), i % 2, float(i), np.full(3, i + 1), i % 7 == 0)
        return buf

    a, b = filled(5), filled(5)
    assert a.size == 32
    for _ in range(3):
        for x, y in zip(a.sample(8), b.sample(8)):
            np.testing.assert_array_equal(x, y)


def test_td_update_moves_towards_target():
    q, target = LinearQ(2), LinearQ(2)
    phi = np.array([[1.0, 0.0]])
    batch = (phi, np.array([Action.GO]), np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
    opt = Adam(q.weights.shape, 0.1)
    losses = [td_update(q, target, batch, 0.9, opt) for _ in range(200)]
    assert losses[-1] < losses[0]
    assert q.values(phi[0])[Action.GO] == pytest.approx(1.0, abs=0.05)


def test_divergence_raises():
    q, target = LinearQ(1), LinearQ(1)
    batch = (np.array([[np.inf]]), np.array([0]), np.array([1.0]), np.zeros((1, 1)), np.array([1.0]))
    with pytest.raises(TrainingDiverged):
        with np.errstate(all="ignore"):
            td_update(q, target, batch, 0.9, Adam(q.weights.shape, 0.1))


SMALL = ScenarioConfig(grid=(1, 1), demand_rate=0.1, horizon=60, window=(0, 60), rv_rate=0.8)


def _env(seed, policy, sink):
    return Simulation(SMALL, seed, policy=policy, sink=sink).run()


def test_zero_learning_rate_keeps_weights():
    res = train(_env, TrainConfig(iterations=3, lr=0.0), FEAT_W)
    assert not res.q.weights.any()
    assert len(res.curve) == 3


def test_learning_curve_is_bit_identical():
    cfg = TrainConfig(iterations=4, updates_per_iteration=10, seed=3)
    a = train(_env, cfg, FEAT_W)
    b = train(_env, cfg, FEAT_W)
    assert a.curve == b.curve
    np.testing.assert_array_equal(a.q.weights, b.q.weights)


def test_all_vehicles_share_one_snapshot_per_episode():
    seen: list[set] = []

    def env(seed, policy, sink):
        ids: set = set()

        class Spy:
            def act(self, obs, rng):
                ids.add((id(policy.q), policy.q.weights.tobytes()))
                return policy.act(obs, rng)

        out = Simulation(SMALL, seed, policy=Spy(), sink=sink).run()
        seen.append(ids)
        return out

    train(env, TrainConfig(iterations=3, updates_per_iteration=5), FEAT_W)
    assert all(len(s) <= 1 for s in seen)
    assert sum(len(s) for s in seen) >= 2


def test_checkpoint_roundtrip(tmp_path):
    q = LinearQ(FEAT_W, np.random.default_rng(0).normal(size=(2, FEAT_W)))
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, q, TrainConfig(iterations=7))
    pol = load_checkpoint(path)
    assert isinstance(pol, QPolicy)
    np.testing.assert_array_equal(pol.q.weights, q.weights)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_weight_shape_checked():
    with pytest.raises(ValueError):
        LinearQ(3, np.zeros((2, 4)))
