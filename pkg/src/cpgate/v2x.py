"""Broadcast messaging: BSM beacons, CPM payloads, the lossy channel and congestion levels."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .perception import DetectedObject
from .world import WorldState

BSM_BITS = 2400


@dataclass(frozen=True)
class ChannelConfig:
    comm_range: float = 300.0
    interference_range: float = 500.0
    data_rate: float = 6_000_000.0  # bits per second
    cpm_interval: float = 0.1  # seconds
    header_bits: int = 400
    per_record_bits: int = 280
    bsm_lossy: bool = True

    def __post_init__(self):
        if min(self.comm_range, self.interference_range, self.data_rate, self.cpm_interval) <= 0:
            raise ValueError("channel parameters must be positive")
        if self.interference_range < self.comm_range:
            raise ValueError("interference_range must be at least comm_range")
        if self.header_bits < 0 or self.per_record_bits < 0:
            raise ValueError("message sizes must be non-negative")


@dataclass(frozen=True)
class Bsm:
    sender: int
    tick: int
    position: tuple[float, float]
    speed: float
    acceleration: float
    orientation: float

    @property
    def size_bits(self) -> int:
        return BSM_BITS


@dataclass(frozen=True)
class Cpm:
    """Perception report; ``position``/``heading`` give the sender reference pose."""

    sender: int
    tick: int
    position: tuple[float, float]
    heading: float
    records: tuple[DetectedObject, ...]
    header_bits: int = 400
    per_record_bits: int = 280

    @property
    def size_bits(self) -> int:
        return self.header_bits + self.per_record_bits * len(self.records)

    @property
    def object_ids(self) -> frozenset[int]:
        return frozenset(r.object_id for r in self.records)


def make_bsm(world: WorldState, sender: int) -> Bsm:
    return Bsm(
        sender=int(sender),
        tick=world.tick,
        position=(float(world.x[sender]), float(world.y[sender])),
        speed=float(world.speed[sender]),
        acceleration=float(world.accel[sender]),
        orientation=float(world.heading[sender]),
    )


def make_cpm(world: WorldState, sender: int, detections: Sequence[DetectedObject], cfg: ChannelConfig) -> Cpm:
    return Cpm(
        sender=int(sender),
        tick=world.tick,
        position=(float(world.x[sender]), float(world.y[sender])),
        heading=float(world.heading[sender]),
        records=tuple(detections),
        header_bits=cfg.header_bits,
        per_record_bits=cfg.per_record_bits,
    )


def reception_probability(lam, s, cfg: ChannelConfig = ChannelConfig()):
    """Delivery probability exp(-lam * s / (rate * interval)), vectorized."""
    lam = np.asarray(lam, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(lam < 0) or np.any(s < 0):
        raise ValueError("lambda and s must be non-negative")
    p = np.exp(-lam * s / (cfg.data_rate * cfg.cpm_interval))
    # clamp into (0, 1]
    p = np.clip(p, np.finfo(float).tiny, 1.0)
    return float(p) if p.ndim == 0 else p


def channel_uniforms(seed: int, tick: int, n: int) -> np.ndarray:
    """Common random numbers for one tick, shape (n, n, 2) indexed by (sender, receiver, type).

    The draws depend only on (seed, tick, n), never on which messages are
    sent, so two policies run on the same scenario see identical channel
    randomness and a message is delivered iff its uniform falls below p.
    """
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0xC4A77E1, int(tick)])
    return rng.random((n, n, 2))


@dataclass
class TickDelivery:
    """Outcome of one channel slot."""

    inboxes: dict[int, list]
    log: list[tuple]  # (tick, sender, msg_type, bytes, receivers_in_range, delivered_count)
    records: list[tuple]  # (tick, sender, receiver, msg_type, delivered)
    lam: dict[int, int]
    mean_cpm_bits: dict[int, float]
    probability: dict[int, float]


def deliver(bsms: Sequence[Bsm], cpms: Sequence[Cpm], world: WorldState, cfg: ChannelConfig,
            seed: int, uniforms: np.ndarray | None = None, keep_records: bool = False) -> TickDelivery:
    """Resolve one slot of broadcasts.

    For a sender ``i``, ``lam`` counts vehicles transmitting anything within
    ``interference_range`` (``i`` included) and ``s`` is the mean CPM size over
    those transmitters, a transmitter without a CPM contributing zero bits.
    Each (message, in-range receiver) pair is delivered independently.
    Per-pair delivery records are only collected with ``keep_records``.
    """
    cv = world.connected_ids
    slot = {int(e): k for k, e in enumerate(cv)}
    tx = sorted({m.sender for m in bsms} | {m.sender for m in cpms})
    inboxes: dict[int, list] = {int(e): [] for e in cv}
    if not tx:
        return TickDelivery(inboxes, [], [], {}, {}, {})
    if uniforms is None:
        uniforms = channel_uniforms(seed, world.tick, len(cv))

    tx_arr = np.array(tx)
    cpm_bits = np.zeros(len(tx))
    pos = {s: i for i, s in enumerate(tx)}
    for m in cpms:
        cpm_bits[pos[m.sender]] = m.size_bits
    tx_x, tx_y = world.x[tx_arr], world.y[tx_arr]
    d_tx = np.hypot(tx_x[:, None] - tx_x[None, :], tx_y[:, None] - tx_y[None, :])
    near = d_tx <= cfg.interference_range
    lam = near.sum(axis=1)
    mean_bits = (near * cpm_bits[None, :]).sum(axis=1) / lam
    prob = reception_probability(lam, mean_bits, cfg)
    prob = np.atleast_1d(prob)

    cv_x, cv_y = world.x[cv], world.y[cv]
    log, records = [], []
    lam_d = {int(s): int(l) for s, l in zip(tx, lam)}
    bits_d = {int(s): float(b) for s, b in zip(tx, mean_bits)}
    prob_d = {int(s): float(p) for s, p in zip(tx, prob)}

    def send(msg, type_index, name):
        i = pos[msg.sender]
        d = np.hypot(cv_x - tx_x[i], cv_y - tx_y[i])
        in_range = (d <= cfg.comm_range) & (cv != msg.sender)
        lossy = type_index == 1 or cfg.bsm_lossy
        u = uniforms[slot[msg.sender], :, type_index]
        ok = in_range & ((u < prob[i]) if lossy else True)
        for r in cv[in_range] if keep_records else ():
            records.append((msg.tick, msg.sender, int(r), name, bool(ok[slot[int(r)]])))
        for r in cv[ok]:
            inboxes[int(r)].append(msg)
        log.append((msg.tick, msg.sender, name, msg.size_bits // 8, int(in_range.sum()), int(ok.sum())))

    for m in bsms:
        send(m, 0, "BSM")
    for m in cpms:
        send(m, 1, "CPM")
    return TickDelivery(inboxes, log, records, lam_d, bits_d, prob_d)


@dataclass(frozen=True)
class CongestionConfig:
    window_ticks: int = 10
    thresholds: tuple[int, ...] = (20, 60, 120, 200)

    def __post_init__(self):
        if self.window_ticks < 1:
            raise ValueError("window_ticks must be at least 1")
        if len(self.thresholds) != 4 or list(self.thresholds) != sorted(self.thresholds):
            raise ValueError("need four non-decreasing thresholds")


def level_from_count(count: int, thresholds: Sequence[int] = CongestionConfig.thresholds) -> int:
    """1 + number of thresholds strictly exceeded."""
    return 1 + sum(1 for t in thresholds if count > t)


def congestion_level(inbox_history: Iterable[Sequence], window_ticks: int = 10,
                     thresholds: Sequence[int] = CongestionConfig.thresholds) -> int:
    """Level 1..5 from BSM+CPM receptions in the newest ``window_ticks`` inboxes."""
    if window_ticks < 1:
        raise ValueError("window_ticks must be at least 1")
    recent = list(inbox_history)[-window_ticks:]
    return level_from_count(sum(len(box) for box in recent), thresholds)


@dataclass
class CongestionMeter:
    """Rolling per-vehicle reception counter."""

    cfg: CongestionConfig = field(default_factory=CongestionConfig)
    counts: dict[int, deque] = field(default_factory=dict)

    def push(self, vehicle: int, received: int) -> None:
        q = self.counts.setdefault(vehicle, deque(maxlen=self.cfg.window_ticks))
        q.append(received)

    def level(self, vehicle: int) -> int:
        return level_from_count(sum(self.counts.get(vehicle, ())), self.cfg.thresholds)


def count_object_reports(cpms: Iterable[Cpm], object_id: int, tick: int) -> int:
    """Number of CPMs generated at ``tick`` that carry a record of ``object_id``."""
    return sum(1 for m in cpms if m.tick == tick and object_id in m.object_ids)


def report_counts(cpms: Iterable[Cpm]) -> dict[int, int]:
    """Object id -> number of CPMs reporting it, for one tick's transmissions."""
    out: dict[int, int] = {}
    for m in cpms:
        for oid in m.object_ids:
            out[oid] = out.get(oid, 0) + 1
    return out
