"""Closed-loop episode engine.

Slot timeline for tick ``t``: every connected vehicle senses the world,
builds its projection from the inbox delivered in slot ``t-1``, the policy
gates its CPM, all BSMs and gated CPMs go through the channel, and the
resulting inbox updates each vehicle's knowledge before the world advances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..perception import (
    SensorConfig,
    categories_from_evidence,
    local_detections,
    projection_evidence,
    record_positions,
)
from ..protocols import BaselinePolicy, LearnedPolicy, Policy
from ..rl.dqn import DQNLearner, Transition
from ..rl.encoding import ObservationWindow
from ..rl.reward import NEVER, TRANSMIT, RewardConfig, action_reward_arrays
from ..v2x import (
    ChannelConfig,
    CongestionConfig,
    CongestionMeter,
    Cpm,
    channel_uniforms,
    deliver,
    make_bsm,
    make_cpm,
)
from ..world import ScenarioConfig, generate_scenario, step


@dataclass(frozen=True)
class SimConfig:
    sensors: SensorConfig = field(default_factory=SensorConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    congestion: CongestionConfig = field(default_factory=CongestionConfig)
    window: int = 10
    staleness_ticks: int = 5
    detection_radius: float = 75.0


@dataclass
class EpisodeLog:
    scenario: ScenarioConfig
    policy: str
    n_vehicles: int
    ticks: int = 0
    cpm_sent: int = 0
    cpm_records_sent: int = 0
    known: int = 0
    targets: int = 0
    network_log: list = field(default_factory=list)
    delivery_records: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    transmit_decisions: int = 0
    learned_decisions: int = 0
    cpm_sent_per_vehicle: np.ndarray | None = None
    nonempty_ticks_per_vehicle: np.ndarray | None = None

    @property
    def detection_ratio(self) -> float | None:
        return self.known / self.targets if self.targets else None


def run_episode(scenario: ScenarioConfig, policy: Policy | None = None, sim: SimConfig = SimConfig(),
                learner: DQNLearner | None = None, ticks: int | None = None,
                keep_records: bool = False, channel_seed: int | None = None,
                world_and_routes=None, on_tick=None, stop_when_trained: bool = False) -> EpisodeLog:
    """Simulate one episode.

    With a ``learner`` the gate is the learner's epsilon-greedy network,
    transitions are pushed to its replay memory and ``updates_per_tick``
    gradient steps run after every tick; ``stop_when_trained`` ends the
    episode early once the learner has used up its step budget.
    """
    if policy is None and learner is None:
        policy = BaselinePolicy()
    world, routes = world_and_routes or generate_scenario(scenario)
    n_ticks = scenario.episode_ticks if ticks is None else ticks
    seed = scenario.rng_seed if channel_seed is None else channel_seed
    cv = world.connected_ids
    n_cv, n = len(cv), world.n
    ch = sim.channel
    name = policy.name if policy is not None else "learned"
    log = EpisodeLog(scenario, name, n_cv)
    log.cpm_sent_per_vehicle = np.zeros(n_cv, dtype=int)
    log.nonempty_ticks_per_vehicle = np.zeros(n_cv, dtype=int)

    last_local = np.full((n_cv, n), NEVER, dtype=np.int64)
    last_cpm = np.full((n_cv, n), NEVER, dtype=np.int64)
    last_bsm = np.full((n_cv, n), NEVER, dtype=np.int64)
    detected = np.zeros((n_cv, n), dtype=bool)
    meter = CongestionMeter(sim.congestion)
    windows = [ObservationWindow(sim.window) for _ in range(n_cv)]
    empty = np.zeros((0, 2))
    points = [(empty, empty, empty)] * n_cv
    pending: dict[int, tuple] = {}

    needs_obs = learner is not None or policy.needs_observation
    if learner is not None:
        policy = LearnedPolicy(learner.q_net, learner.epsilon, learner.rng)

    for t in range(n_ticks):
        boxes = world.boxes()
        dets = [local_detections(world, int(e), sim.sensors, boxes) for e in cv]
        detected[:] = False
        for r, d in enumerate(dets):
            if d:
                detected[r, [o.object_id for o in d]] = True
        last_local[detected] = world.tick
        has = np.array([len(d) > 0 for d in dets])
        log.nonempty_ticks_per_vehicle += has

        psi = np.array([meter.level(int(e)) for e in cv])
        raw = None
        if needs_obs:
            for r, e in enumerate(cv):
                ev = projection_evidence(world, int(e), dets[r], sensors=sim.sensors, boxes=boxes, points=points[r])
                windows[r].push(categories_from_evidence(ev))
            raw = np.stack([windows[r].observe(int(psi[r])).to_raw() for r in range(n_cv)])

        if learner is not None:
            policy.epsilon = learner.epsilon
            for r, (s, a, rew) in pending.items():
                learner.observe(Transition(s, a, rew, raw[r], False))
            pending = {}

        decisions = policy.decide(has, raw, world.tick)
        cpms: list[Cpm] = []
        for r, dec in enumerate(decisions):
            if dec.transmit and dets[r]:
                cpms.append(make_cpm(world, int(cv[r]), dets[r], ch))
                log.cpm_sent_per_vehicle[r] += 1
        bsms = [make_bsm(world, int(e)) for e in cv]
        log.cpm_sent += len(cpms)
        log.cpm_records_sent += sum(len(m.records) for m in cpms)
        log.transmit_decisions += len(cpms)
        log.learned_decisions += int(sum(1 for d in decisions if d.q_values is not None))

        if learner is not None:
            theta = np.zeros(n, dtype=int)
            for m in cpms:
                theta[[rec.object_id for rec in m.records]] += 1
            d_cv = np.hypot(world.x[cv][:, None] - world.x[cv][None, :], world.y[cv][:, None] - world.y[cv][None, :])
            tx_rows = {int(np.searchsorted(cv, m.sender)): m for m in cpms}
            for r, dec in enumerate(decisions):
                if dec.q_values is None:
                    continue
                reward = 0.0
                if dec.action == TRANSMIT:
                    rows = np.flatnonzero((d_cv[r] <= ch.comm_range) & (np.arange(n_cv) != r))
                    recv = np.stack([rows, cv[rows]], axis=1)
                    ids = np.array([rec.object_id for rec in tx_rows[r].records])
                    reward = action_reward_arrays(ids, recv, detected, last_local, psi, theta, world.tick, sim.reward)
                pending[r] = (raw[r], dec.action, reward)
                log.rewards.append(reward)

        uniforms = channel_uniforms(seed, world.tick, n_cv)
        out = deliver(bsms, cpms, world, ch, seed, uniforms=uniforms, keep_records=keep_records)
        log.network_log.extend(out.log)
        if keep_records:
            log.delivery_records.extend(out.records)

        obj_xy = {m.sender: record_positions(m.position, m.heading, m.records) for m in cpms}
        new_points = []
        for r, e in enumerate(cv):
            box = out.inboxes[int(e)]
            meter.push(int(e), len(box))
            bsm_xy, cpm_xy, o_xy = [], [], []
            for msg in box:
                if isinstance(msg, Cpm):
                    cpm_xy.append(msg.position)
                    o_xy.append(obj_xy[msg.sender])
                    last_cpm[r, [rec.object_id for rec in msg.records]] = world.tick
                else:
                    bsm_xy.append(msg.position)
                    last_bsm[r, msg.sender] = world.tick
            new_points.append((
                np.asarray(bsm_xy, dtype=float).reshape(-1, 2),
                np.asarray(cpm_xy, dtype=float).reshape(-1, 2),
                np.concatenate(o_xy) if o_xy else empty,
            ))
        points = new_points

        # detection ratio over moving objects within the radius of each vehicle
        dist = np.hypot(world.x[None, :] - world.x[cv][:, None], world.y[None, :] - world.y[cv][:, None])
        within = (dist <= sim.detection_radius) & world.moving_mask[None, :]
        within[np.arange(n_cv), cv] = False
        fresh = world.tick - sim.staleness_ticks
        known = detected | (last_cpm > fresh) | (world.connected[None, :] & (last_bsm > fresh))
        log.known += int((known & within).sum())
        log.targets += int(within.sum())

        if learner is not None:
            for _ in range(learner.cfg.updates_per_tick):
                learner.update()
        if on_tick is not None:
            on_tick(world, out, log)
        log.ticks += 1
        world = step(world, routes)
        if learner is not None and stop_when_trained and learner.done:
            break

    if learner is not None:
        for r, (s, a, rew) in pending.items():
            learner.observe(Transition(s, a, rew, s, True))
    return log


def packet_reception_ratio(network_log, msg_type: str = "CPM") -> float | None:
    """Delivered (message, in-range receiver) pairs over all such pairs."""
    in_range = delivered = 0
    for _, _, kind, _, n_range, n_ok in network_log:
        if kind == msg_type:
            in_range += n_range
            delivered += n_ok
    return delivered / in_range if in_range else None


def prr_from_records(records, msg_type: str = "CPM") -> float | None:
    """Same ratio recomputed from raw per-pair delivery records."""
    rows = [ok for (_, _, _, kind, ok) in records if kind == msg_type]
    return sum(rows) / len(rows) if rows else None


def cpm_data_volume(network_log, n_vehicles: int, episodes: int = 1, per_record_bits: int = 280,
                    header_bits: int = 400) -> float:
    """CPM object records sent per vehicle per episode, recovered from logged sizes."""
    records = 0
    for _, _, kind, nbytes, _, _ in network_log:
        if kind == "CPM":
            records += round((nbytes * 8 - header_bits) / per_record_bits)
    return records / n_vehicles / episodes


def mean_or_none(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return sum(values) / len(values) if values else None
