"""Per-object sharing reward and its aggregation over receivers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

NEVER = -(10 ** 9)  # tick sentinel for "never locally detected"

TRANSMIT = 0
DISCARD = 1
ACTION_NAMES = ("Transmit", "Discard")


@dataclass(frozen=True)
class RewardConfig:
    mu_cpm: float = -0.1
    mu_hist: float = -0.2
    mu_netcong: float = -0.05
    window: int = 10

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")

    def validate_penalties(self) -> None:
        if not (self.mu_cpm < 0 and self.mu_hist < 0 and self.mu_netcong < 0):
            raise ValueError("penalty weights must be strictly negative")


def history_factor(t: int, tau_omega: int, window: int) -> float:
    """Inverse recency of the receiver's last local sighting; 0 beyond ``window``.

    Zero lag (seen this very tick) is capped at 1; ``NEVER`` gives 0.
    """
    if tau_omega <= NEVER:
        return 0.0
    lag = t - tau_omega
    if lag < 0:
        raise ValueError("tau_omega lies in the future")
    if lag > window:
        return 0.0
    if lag == 0:
        return 1.0
    return 1.0 / lag


def reward_per_pair(local_unseen: bool, theta: int, phi: float, congestion: int,
                    cfg: RewardConfig = RewardConfig()) -> float:
    """Reward for sharing one object from one transmitter to one receiver."""
    if theta < 1:
        raise ValueError("theta counts the candidate CPM itself and is at least 1")
    return (1.0 if local_unseen else 0.0) + cfg.mu_cpm * theta + cfg.mu_hist * phi + cfg.mu_netcong * congestion


@dataclass(frozen=True)
class ReceiverView:
    """What the trainer knows about one receiver at the current tick."""

    vehicle: int
    detected: frozenset[int]
    last_seen: Mapping[int, int] = field(default_factory=dict)
    congestion: int = 1


def action_reward(action: int, object_ids: Sequence[int], receivers: Sequence[ReceiverView],
                  theta: Mapping[int, int], tick: int, cfg: RewardConfig = RewardConfig()) -> float:
    """Mean over receivers of the summed per-object reward; Discard earns 0.

    Objects that are the receiver itself carry no information for it and are
    skipped.
    """
    if action == DISCARD or not receivers:
        return 0.0
    total = 0.0
    for view in receivers:
        for oid in object_ids:
            if oid == view.vehicle:
                continue
            phi = history_factor(tick, view.last_seen.get(oid, NEVER), cfg.window)
            total += reward_per_pair(oid not in view.detected, theta[oid], phi, view.congestion, cfg)
    return total / len(receivers)


def action_reward_arrays(object_ids: np.ndarray, receivers: np.ndarray, detected: np.ndarray,
                         last_seen: np.ndarray, congestion: np.ndarray, theta: np.ndarray,
                         tick: int, cfg: RewardConfig = RewardConfig()) -> float:
    """Vectorized :func:`action_reward` for a Transmit decision.

    ``detected`` and ``last_seen`` are (vehicles, entities) tables;
    ``receivers`` is (k, 2) with the table row and entity id of each receiver.
    """
    if len(receivers) == 0:
        return 0.0
    rows, ids = receivers[:, 0], receivers[:, 1]
    obj = np.asarray(object_ids, dtype=int)
    seen = detected[np.ix_(rows, obj)]
    last = last_seen[np.ix_(rows, obj)]
    lag = tick - last
    with np.errstate(divide="ignore"):
        phi = np.where((last <= NEVER) | (lag > cfg.window), 0.0, 1.0 / np.maximum(lag, 1))
    r = (~seen) + cfg.mu_cpm * theta[obj][None, :] + cfg.mu_hist * phi + cfg.mu_netcong * congestion[rows][:, None]
    r = np.where(obj[None, :] == ids[:, None], 0.0, r)
    return float(r.sum() / len(rows))
