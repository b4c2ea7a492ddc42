"""Stop/Go policies and a replay-based linear Q-learner.

All RVs of a run query the same policy object; parameters only change
between episodes, so every decision inside an episode sees one snapshot.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .control import Action, Observation
from .reward import RewardBreakdown

CHECKPOINT_FORMAT = "mixtraffic-linear-q"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    pass


class Policy(Protocol):
    def act(self, obs: Observation, rng: np.random.Generator) -> Action: ...


@dataclass
class HeuristicPolicy:
    """Go when the ego threat is at most ``theta_go`` and no conflicting movement holds the box."""

    theta_go: float = 0.2

    def act(self, obs: Observation, rng: np.random.Generator | None = None) -> Action:
        return heuristic_act(obs, self.theta_go)


def heuristic_act(obs: Observation, theta_go: float = 0.2) -> Action:
    if obs.ego_threat <= theta_go and obs.ego_interior == 0.0:
        return Action.GO
    return Action.STOP


class RandomPolicy:
    def act(self, obs: Observation, rng: np.random.Generator) -> Action:
        return Action.GO if rng.random() < 0.5 else Action.STOP


class AlwaysGoPolicy:
    def act(self, obs: Observation, rng: np.random.Generator | None = None) -> Action:
        return Action.GO


def features(obs: Observation) -> np.ndarray:
    """Observation vector plus ego-gathered terms and a bias."""
    return np.concatenate(
        [obs.vector(), [obs.ego_queue, obs.ego_wait, obs.ego_threat, obs.ego_interior, 1.0]]
    )


def feature_width(obs_width: int) -> int:
    return obs_width + 5


class LinearQ:
    """Per-action linear value function ``Q(s, a) = W[a] . phi(s)``."""

    def __init__(self, width: int, weights: np.ndarray | None = None):
        self.width = width
        self.weights = np.zeros((len(Action), width)) if weights is None else np.array(weights, dtype=float)
        if self.weights.shape != (len(Action), width):
            raise ValueError(f"weights must have shape {(len(Action), width)}")

    def values(self, phi: np.ndarray) -> np.ndarray:
        return self.weights @ phi

    def copy(self) -> "LinearQ":
        return LinearQ(self.width, self.weights.copy())


def greedy(values: np.ndarray) -> Action:
    """Argmax with ties resolved to Stop."""
    return Action.GO if values[Action.GO] > values[Action.STOP] else Action.STOP


def act(q: LinearQ, obs: Observation, explore: bool = False, epsilon: float = 0.0, rng: np.random.Generator | None = None) -> Action:
    if explore and epsilon > 0.0:
        if rng is None:
            raise ValueError("exploration needs an rng")
        if rng.random() < epsilon:
            return Action.GO if rng.random() < 0.5 else Action.STOP
    return greedy(q.values(features(obs)))


@dataclass
class QPolicy:
    """Greedy (or epsilon-greedy) policy over a frozen :class:`LinearQ` snapshot."""

    q: LinearQ
    epsilon: float = 0.0

    def act(self, obs: Observation, rng: np.random.Generator) -> Action:
        return act(self.q, obs, explore=self.epsilon > 0, epsilon=self.epsilon, rng=rng)


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr: float = 5e-4
    iterations: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    #: fraction of iterations over which epsilon decays linearly
    eps_decay: float = 0.5
    replay_capacity: int = 50_000
    batch_size: int = 64
    updates_per_iteration: int = 100
    target_sync: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.iterations < 0 or self.batch_size < 1 or self.target_sync < 1:
            raise ValueError("iterations >= 0, batch_size >= 1, target_sync >= 1")

    def epsilon(self, it: int) -> float:
        span = max(1.0, self.eps_decay * self.iterations)
        frac = min(1.0, it / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


class ReplayBuffer:
    def __init__(self, capacity: int, width: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.phi = np.zeros((capacity, width))
        self.next_phi = np.zeros((capacity, width))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def add(self, phi, action, reward, next_phi, done) -> None:
        i = self._head
        self.phi[i] = phi
        self.action[i] = int(action)
        self.reward[i] = reward
        self.next_phi[i] = 0.0 if next_phi is None else next_phi
        self.done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int):
        idx = self.rng.integers(0, self.size, size=n)
        return self.phi[idx], self.action[idx], self.reward[idx], self.next_phi[idx], self.done[idx]


class TransitionCollector:
    """Decision sink: pairs each RV decision with that RV's next one.

    A granted Go ends the vehicle's decision sequence (terminal transition).
    ``returns`` maps vehicle id to its undiscounted reward sum.
    """

    def __init__(self):
        self.transitions: list[tuple] = []
        self.pending: dict[int, tuple] = {}
        self.returns: dict[int, float] = {}

    def on_decision(self, t: float, vehicle: int, obs: Observation, action: Action, reward: RewardBreakdown, terminal: bool) -> None:
        phi = features(obs)
        prev = self.pending.pop(vehicle, None)
        if prev is not None:
            self.transitions.append((prev[0], prev[1], prev[2], phi, False))
        self.returns[vehicle] = self.returns.get(vehicle, 0.0) + reward.total
        if terminal:
            self.transitions.append((phi, action, reward.total, None, True))
        else:
            self.pending[vehicle] = (phi, action, reward.total)

    def on_episode_end(self) -> None:
        # horizon cut: close open sequences as terminal
        for phi, a, r in self.pending.values():
            self.transitions.append((phi, a, r, None, True))
        self.pending.clear()

    @property
    def mean_return(self) -> float:
        if not self.returns:
            return 0.0
        return float(np.mean(list(self.returns.values())))


class Adam:
    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def td_update(q: LinearQ, target: LinearQ, batch, gamma: float, opt: Adam) -> float:
    """One minibatch step on the squared one-step TD error; returns the batch loss."""
    phi, a, r, nphi, done = batch
    pred = np.einsum("ij,ij->i", phi, q.weights[a])
    nxt = (nphi @ target.weights.T).max(axis=1)
    y = r + gamma * (1.0 - done) * nxt
    err = pred - y
    grad = np.zeros_like(q.weights)
    for act_i in range(len(Action)):
        sel = a == act_i
        if sel.any():
            grad[act_i] = err[sel] @ phi[sel] / len(a)
    q.weights -= opt.step(grad)
    if not np.all(np.isfinite(q.weights)):
        raise TrainingDiverged("Q weights became non-finite")
    return float(0.5 * np.mean(err**2))


@dataclass
class TrainResult:
    q: LinearQ
    curve: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    @property
    def policy(self) -> QPolicy:
        return QPolicy(self.q)


EnvFactory = Callable[[int, Policy, TransitionCollector], object]


def train(env_factory: EnvFactory, config: TrainConfig, width: int) -> TrainResult:
    """Central training of one shared value function.

    ``env_factory(seed, policy, sink)`` must run one full episode with
    ``policy`` deciding for every RV and report decisions to ``sink``.
    One iteration is one episode followed by ``updates_per_iteration``
    replay minibatches; the target copy is synced every ``target_sync``
    iterations.
    """
    rng = np.random.default_rng([config.seed, 0xA6E])
    q = LinearQ(width)
    target = q.copy()
    replay = ReplayBuffer(config.replay_capacity, width, rng)
    opt = Adam(q.weights.shape, config.lr)
    result = TrainResult(q)
    for it in range(config.iterations):
        snapshot = QPolicy(q.copy(), epsilon=config.epsilon(it))
        sink = TransitionCollector()
        episode_seed = int(np.random.SeedSequence([config.seed, it]).generate_state(1)[0])
        env_factory(episode_seed, snapshot, sink)
        sink.on_episode_end()
        for phi, a, r, nphi, done in sink.transitions:
            replay.add(phi, a, r, nphi, done)
        result.curve.append(sink.mean_return)
        if replay.size and config.lr > 0:
            loss = 0.0
            for _ in range(config.updates_per_iteration):
                loss = td_update(q, target, replay.sample(config.batch_size), config.gamma, opt)
            result.losses.append(loss)
        if (it + 1) % config.target_sync == 0:
            target = q.copy()
    return result


def save_checkpoint(path: str | Path, q: LinearQ, config: TrainConfig | None = None, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_width": q.width,
        "actions": [a.name for a in Action],
        "weights": q.weights.tolist(),
        "config": asdict(config) if config is not None else {},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_checkpoint(path: str | Path) -> QPolicy:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    w = np.asarray(payload["weights"], dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{path}: non-finite weights")
    return QPolicy(LinearQ(int(payload["feature_width"]), w))


def write_curve(path: str | Path, curve: list[float], losses: list[float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_return", "loss"])
        for i, ret in enumerate(curve):
            loss = losses[i] if losses and i < len(losses) else ""
            w.writerow([i, repr(ret), repr(loss) if loss != "" else ""])

