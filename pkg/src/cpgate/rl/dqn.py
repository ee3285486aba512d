"""Deep Q-learning: action selection, replay memory, target network and updates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .network import Sgd
from .reward import DISCARD, TRANSMIT


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    discount: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    replay_capacity: int = 100_000
    batch_size: int = 32
    target_sync: int = 1_000
    total_steps: int = 20_000
    updates_per_tick: int = 1
    momentum: float = 0.9
    max_grad_norm: float | None = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("replay capacity must hold at least one batch")
        if self.target_sync < 1 or self.total_steps < 0:
            raise ValueError("target_sync must be positive and total_steps non-negative")

    def epsilon(self, step: int) -> float:
        """Linear decay over the first ``epsilon_decay_fraction`` of training."""
        horizon = self.epsilon_decay_fraction * self.total_steps
        if horizon <= 0:
            return self.epsilon_end
        frac = min(step / horizon, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def select_action(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over (Q(Transmit), Q(Discard)); ties go to Transmit."""
    q_t, q_d = float(q_values[0]), float(q_values[1])
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(2))
    return TRANSMIT if q_t >= q_d else DISCARD


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise greedy actions with the Transmit tie-break."""
    return np.where(q[:, TRANSMIT] >= q[:, DISCARD], TRANSMIT, DISCARD)


def tabular_q_update(q: np.ndarray, s: int, a: int, r: float, s_next: int | None,
                     alpha: float, discount: float) -> np.ndarray:
    """One Q-table update; ``s_next=None`` marks a terminal transition."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    q = np.array(q, dtype=float, copy=True)
    future = 0.0 if s_next is None else float(np.max(q[s_next]))
    q[s, a] = (1.0 - alpha) * q[s, a] + alpha * (r + discount * future)
    return q


def infer(net, state) -> np.ndarray:
    """Q-value pair for one already-prepared input."""
    q, _ = net.forward(state)
    return q[0]


@dataclass
class Transition:
    state: np.ndarray  # compact raw row, see AgentObservation.to_raw
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


class ReplayBuffer:
    """Fixed-capacity ring buffer of compact transitions."""

    def __init__(self, capacity: int, state_dim: int, dtype=np.int8):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int8)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.states[i] = t.state
        self.next_states[i] = t.next_state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminal[i] = t.terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminal[idx])


def td_targets(target_net, rewards, next_inputs, terminal, discount: float) -> np.ndarray:
    q_next, _ = target_net.forward(next_inputs)
    return rewards + discount * np.where(terminal, 0.0, q_next.max(axis=1))


def td_loss_and_grads(net, inputs, actions, targets):
    """Mean squared TD error on the taken actions, with its parameter gradients."""
    q, cache = net.forward(inputs, keep_cache=True)
    n = len(actions)
    rows = np.arange(n)
    err = q[rows, actions] - targets
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / n
    return float(np.mean(err ** 2)), net.backward(cache, dq)


def train_step(replay: ReplayBuffer, q_net, target_net, optimizer: Sgd, cfg: TrainConfig,
               rng: np.random.Generator) -> float | None:
    """One minibatch update; returns the loss, or None when replay is too small."""
    if len(replay) < cfg.batch_size:
        return None
    s, a, r, s2, term = replay.sample(cfg.batch_size, rng)
    targets = td_targets(target_net, r, q_net.prepare(s2), term, cfg.discount)
    loss, grads = td_loss_and_grads(q_net, q_net.prepare(s), a.astype(int), targets)
    optimizer.step(q_net.params, grads)
    return loss


@dataclass
class DQNLearner:
    """Shared policy network with its target copy, replay memory and update schedule."""

    q_net: Any
    cfg: TrainConfig
    state_dim: int
    target_net: Any = None
    replay: ReplayBuffer = None
    optimizer: Sgd = None
    rng: np.random.Generator = None
    updates: int = 0
    losses: list = field(default_factory=list)

    def __post_init__(self):
        if self.target_net is None:
            self.target_net = self.q_net.copy()
        if self.replay is None:
            self.replay = ReplayBuffer(self.cfg.replay_capacity, self.state_dim)
        if self.optimizer is None:
            self.optimizer = Sgd(self.cfg.learning_rate, self.cfg.momentum, self.cfg.max_grad_norm)
        if self.rng is None:
            self.rng = np.random.default_rng([self.cfg.rng_seed, 1])

    @property
    def epsilon(self) -> float:
        return self.cfg.epsilon(self.updates)

    @property
    def done(self) -> bool:
        return self.updates >= self.cfg.total_steps

    def q_values(self, raw_states) -> np.ndarray:
        q, _ = self.q_net.forward(self.q_net.prepare(raw_states))
        return q

    def act(self, raw_states, epsilon: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        eps = self.epsilon if epsilon is None else epsilon
        q = self.q_values(raw_states)
        actions = np.array([select_action(row, eps, self.rng) for row in q], dtype=int)
        return actions, q

    def observe(self, t: Transition) -> None:
        self.replay.add(t)

    def update(self) -> float | None:
        if self.done:
            return None
        loss = train_step(self.replay, self.q_net, self.target_net, self.optimizer, self.cfg, self.rng)
        if loss is None:
            return None
        self.updates += 1
        self.losses.append(loss)
        if self.updates % self.cfg.target_sync == 0:
            self.target_net = self.q_net.copy()
        return loss
