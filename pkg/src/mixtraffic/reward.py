"""Multi-objective decision reward: ego efficiency, queue parity, threat, conflict penalty."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import Action, Observation


@dataclass(frozen=True)
class RewardWeights:
    lambda_parity: float = 0.2
    lambda_threat: float = 0.5
    conflict_penalty: float = -1.0

    def __post_init__(self):
        if self.lambda_parity < 0 or self.lambda_threat < 0:
            raise ValueError("reward weights must be >= 0")
        if not self.conflict_penalty < 0:
            raise ValueError("conflict_penalty must be < 0")


@dataclass(frozen=True)
class RewardBreakdown:
    r_ego: float
    r_parity: float
    r_threat: float
    conflict: bool
    base: float
    total: float


def ego_reward(w_ego: float, action: Action) -> float:
    return w_ego if action == Action.GO else -w_ego


def parity_penalty(queues) -> float:
    """Population variance of the normalised queue lengths."""
    q = np.asarray(queues, dtype=float)
    mu = q.sum() / q.size
    return float(((q - mu) ** 2).sum() / q.size)


def threat_penalty(action: Action, threat: float) -> float:
    return threat if action == Action.GO else 0.0


def total_reward(
    w_ego: float,
    action: Action,
    queues,
    threat: float,
    weights: RewardWeights = RewardWeights(),
    conflict: bool = False,
) -> RewardBreakdown:
    r_ego = ego_reward(w_ego, action)
    r_par = parity_penalty(queues)
    r_thr = threat_penalty(action, threat)
    # correctly rounded sums, independent of term order
    base = math.fsum((r_ego, -weights.lambda_parity * r_par, -weights.lambda_threat * r_thr))
    total = math.fsum((base, weights.conflict_penalty)) if conflict else base
    return RewardBreakdown(r_ego, r_par, r_thr, conflict, base, total)


def decision_reward(obs: Observation, action: Action, weights: RewardWeights, conflict: bool) -> RewardBreakdown:
    """Reward for a policy decision, from the same snapshot as the observation."""
    return total_reward(obs.ego_wait, action, obs.queues, obs.ego_threat, weights, conflict)
