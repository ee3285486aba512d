"""CPM gating policies: always-transmit baseline, learned DQN gate, random diagnostic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .perception import DetectedObject
from .rl.dqn import select_action
from .rl.encoding import AgentObservation
from .rl.network import CheckpointError, QNetwork
from .rl.reward import DISCARD, TRANSMIT


@dataclass(frozen=True)
class GatingDecision:
    action: int
    q_values: tuple[float, float] | None = None

    @property
    def transmit(self) -> bool:
        return self.action == TRANSMIT


def baseline_decide(detections: Sequence[DetectedObject]) -> GatingDecision:
    """Send a CPM whenever anything is detected."""
    return GatingDecision(TRANSMIT if len(detections) else DISCARD)


def learned_decide(observation: AgentObservation, policy: QNetwork, epsilon: float = 0.0,
                   rng: np.random.Generator | None = None,
                   detections: Sequence[DetectedObject] | None = None) -> GatingDecision:
    """Greedy (or epsilon-greedy) gate from the Q-network; never sends an empty CPM."""
    if detections is not None and len(detections) == 0:
        return GatingDecision(DISCARD)
    if observation.window != policy.window:
        raise CheckpointError(f"observation window {observation.window} != network window {policy.window}")
    q, _ = policy.forward(policy.prepare(observation.to_raw()[None, :]))
    q_pair = (float(q[0, 0]), float(q[0, 1]))
    if rng is None:
        rng = np.random.default_rng(0)
    return GatingDecision(select_action(q_pair, epsilon, rng), q_pair)


class Policy:
    """Batch interface used by the episode engine."""

    name = "policy"
    needs_observation = False

    def decide(self, has_detections: np.ndarray, raw_obs: np.ndarray | None, tick: int) -> list[GatingDecision]:
        raise NotImplementedError


class BaselinePolicy(Policy):
    name = "baseline"

    def decide(self, has_detections, raw_obs, tick):
        return [GatingDecision(TRANSMIT if h else DISCARD) for h in has_detections]


class RandomPolicy(Policy):
    """Diagnostic gate transmitting non-empty CPMs with probability ``p``."""

    def __init__(self, p: float, seed: int = 0):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.p = p
        self.seed = seed
        self.name = f"random({p:g})"

    def decide(self, has_detections, raw_obs, tick):
        u = np.random.default_rng([self.seed, 0x5EED, tick]).random(len(has_detections))
        return [GatingDecision(TRANSMIT if h and x < self.p else DISCARD) for h, x in zip(has_detections, u)]


class LearnedPolicy(Policy):
    """Batched :func:`learned_decide` over all vehicles of a tick."""

    needs_observation = True

    def __init__(self, net: QNetwork, epsilon: float = 0.0, rng: np.random.Generator | None = None,
                 name: str = "learned"):
        self.net = net
        self.epsilon = epsilon
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name

    def decide(self, has_detections, raw_obs, tick):
        out = [GatingDecision(DISCARD)] * len(has_detections)
        idx = np.flatnonzero(has_detections)
        if len(idx) == 0:
            return out
        q, _ = self.net.forward(self.net.prepare(raw_obs[idx]))
        out = list(out)
        for k, i in enumerate(idx):
            pair = (float(q[k, 0]), float(q[k, 1]))
            out[i] = GatingDecision(select_action(pair, self.epsilon, self.rng), pair)
        return out


def parse_policy(spec: str, seed: int = 0) -> Policy:
    """Build a policy from ``baseline``, ``learned(<checkpoint>)`` or ``random(<p>)``."""
    spec = spec.strip()
    if spec == "baseline":
        return BaselinePolicy()
    if spec.startswith("learned(") and spec.endswith(")"):
        net, _ = QNetwork.load(spec[len("learned("):-1])
        return LearnedPolicy(net)
    if spec.startswith("random(") and spec.endswith(")"):
        return RandomPolicy(float(spec[len("random("):-1]), seed)
    raise ValueError(f"unknown policy {spec!r}")
