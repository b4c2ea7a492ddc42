import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixtraffic.control import Action, Observation
from mixtraffic.reward import (
    RewardWeights,
    decision_reward,
    ego_reward,
    parity_penalty,
    threat_penalty,
    total_reward,
)

from oracles import population_variance

unit = st.floats(0.0, 1.0)
queues = st.lists(unit, min_size=8, max_size=8)


@pytest.mark.parametrize("action", [Action.GO, Action.STOP])
def test_ego_zero_wait(action):
    assert ego_reward(0.0, action) == 0.0


def test_ego_signs():
    assert ego_reward(0.5, Action.GO) == 0.5
    assert ego_reward(0.8, Action.STOP) == -0.8


def test_parity_uniform_is_zero():
    assert parity_penalty([0.3] * 8) == 0.0


def test_parity_single_spike():
    assert parity_penalty([1, 0, 0, 0, 0, 0, 0, 0]) == 0.109375


@settings(max_examples=200, deadline=None)
@given(queues, st.randoms(use_true_random=False))
def test_parity_permutation_invariant(q, rnd):
    p = list(q)
    rnd.shuffle(p)
    assert parity_penalty(p) == pytest.approx(parity_penalty(q), abs=1e-15)


def test_threat_penalty_cases():
    assert threat_penalty(Action.STOP, 0.9) == 0.0
    assert threat_penalty(Action.GO, 0.0) == 0.0
    assert threat_penalty(Action.GO, 0.6) == 0.6


def test_composed_example_exact():
    q = [1, 0, 0, 0, 0, 0, 0, 0]
    assert total_reward(0.5, Action.GO, q, 0.6).total == 0.178125
    assert total_reward(0.5, Action.GO, q, 0.6, conflict=True).total == -0.821875


def test_all_zero_stop():
    assert total_reward(0.0, Action.STOP, [0.0] * 8, 0.0).total == 0.0


def test_weights_validated():
    with pytest.raises(ValueError):
        RewardWeights(lambda_parity=-0.1)
    with pytest.raises(ValueError):
        RewardWeights(conflict_penalty=0.0)


@settings(max_examples=300, deadline=None)
@given(unit, st.sampled_from(list(Action)), queues, unit)
def test_breakdown_composition_and_bounds(w, a, q, t):
    rb = total_reward(w, a, q, t)
    wt = RewardWeights()
    assert rb.total == pytest.approx(rb.r_ego - wt.lambda_parity * rb.r_parity - wt.lambda_threat * rb.r_threat, abs=1e-15)
    assert 0.0 <= rb.r_parity <= 0.25
    assert -(1 + 0.2 * 0.25 + 0.5) <= rb.total <= 1.0
    rc = total_reward(w, a, q, t, conflict=True)
    assert rc.total == pytest.approx(rb.total - 1.0, abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(queues, st.integers(0, 7), st.integers(0, 7), st.floats(0.0, 0.5))
def test_mean_preserving_spread_never_helps(q, i, j, eps):
    if i == j:
        return
    q = np.array(q)
    hi, lo = (i, j) if q[i] >= q[j] else (j, i)
    eps = min(eps, 1.0 - q[hi], q[lo])
    spread = q.copy()
    spread[hi] += eps
    spread[lo] -= eps
    a = total_reward(0.4, Action.GO, q, 0.3).total
    b = total_reward(0.4, Action.GO, spread, 0.3).total
    assert b <= a + 1e-12


def test_decision_reward_uses_ego_slot():
    obs = Observation(np.full(8, 0.25), np.array([0, 0, 0.5, 0, 0, 0, 0, 0.0]), np.array([0, 0, 0.6, 0, 0, 0, 0, 0.0]), np.zeros(32), 2)
    rb = decision_reward(obs, Action.GO, RewardWeights(), False)
    assert rb.r_ego == 0.5 and rb.r_threat == 0.6 and rb.r_parity == 0.0


def test_parity_matches_oracle_sample():
    rng = np.random.default_rng(0)
    for q in rng.random((2000, 8)):
        assert abs(parity_penalty(q) - population_variance(list(q))) <= 1e-12
