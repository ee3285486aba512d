"""Occlusion-limited local sensing and the 5x3 circular projection.

Detection is geometric: an entity is seen when its center is inside the
forward field of view and the sight line from the ego center to that center
crosses no other footprint. Static obstacles occlude but are never reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .geometry import segments_hit_boxes, wrap_angle
from .world import Kind, WorldState

N_SECTORS = 5
N_RINGS = 3
N_CELLS = N_SECTORS * N_RINGS
N_CATEGORIES = 13
OUTSIDE = -1


@dataclass(frozen=True)
class SensorConfig:
    fov_total: float = math.radians(150.0)
    ring_boundaries: tuple[float, ...] = (25.0, 50.0, 75.0)

    def __post_init__(self):
        b = self.ring_boundaries
        if len(b) != N_RINGS or any(x >= y for x, y in zip(b, b[1:])) or b[0] <= 0:
            raise ValueError("ring boundaries must be three strictly increasing positive values")
        if not 0 < self.fov_total <= 2 * math.pi:
            raise ValueError("fov_total must lie in (0, 2*pi]")

    @property
    def max_range(self) -> float:
        return self.ring_boundaries[-1]


@dataclass(frozen=True)
class DetectedObject:
    object_id: int
    kind: Kind
    range: float
    bearing: float
    orientation: float
    detected_tick: int


class Local(Enum):
    EMPTY = 0
    OCCUPIED = 1
    OCCLUDED = 2


class InvalidCombination(ValueError):
    pass


# Table I rows: (local, bsm_seen, cpm_seen, object_from_cpm) -> category id
_TABLE = {(Local.EMPTY, False, False, False): 1}
for _base, _local in ((2, Local.OCCUPIED), (8, Local.OCCLUDED)):
    for _offset, (_bsm, _cpm, _obj) in enumerate(
        [(False, False, False), (False, False, True), (True, False, False),
         (True, False, True), (True, True, False), (True, True, True)]
    ):
        _TABLE[(_local, _bsm, _cpm, _obj)] = _base + _offset
CATEGORY_FACTORS = {v: k for k, v in _TABLE.items()}


def categorize(local: Local, bsm_seen: bool, cpm_seen: bool, obj_from_cpm: bool) -> int:
    """Category id 1..13 for one projection cell."""
    if cpm_seen and not bsm_seen:
        raise InvalidCombination("a CPM sender always beacons: cpm_seen requires bsm_seen")
    if local is Local.EMPTY:
        return 1
    return _TABLE[(local, bool(bsm_seen), bool(cpm_seen), bool(obj_from_cpm))]


def cell_of(range_m, bearing, sensors: SensorConfig = SensorConfig()):
    """Cell index ``sector * 3 + ring`` or ``OUTSIDE``; vectorized.

    Sector 0 is the rightmost (most negative bearing) slice, so sector 2 is
    centered straight ahead. Rings are half-open ``[b_{i-1}, b_i)`` except that
    the outer boundary itself belongs to the last ring.
    """
    r = np.asarray(range_m, dtype=float)
    b = wrap_angle(np.asarray(bearing, dtype=float))
    half = sensors.fov_total / 2.0
    inside = (np.abs(b) <= half) & (r <= sensors.max_range) & (r >= 0)
    sector = np.clip(np.floor((b + half) / (sensors.fov_total / N_SECTORS)), 0, N_SECTORS - 1)
    ring = np.minimum(np.searchsorted(sensors.ring_boundaries, r, side="right"), N_RINGS - 1)
    cell = np.where(inside, sector.astype(int) * N_RINGS + ring, OUTSIDE)
    if cell.ndim == 0:
        return int(cell)
    return cell


def cell_centers(sensors: SensorConfig = SensorConfig()):
    """(range, bearing) of every cell center, indexed by cell id."""
    width = sensors.fov_total / N_SECTORS
    bounds = (0.0,) + tuple(sensors.ring_boundaries)
    ranges = np.empty(N_CELLS)
    bearings = np.empty(N_CELLS)
    for sector in range(N_SECTORS):
        for ring in range(N_RINGS):
            c = sector * N_RINGS + ring
            ranges[c] = (bounds[ring] + bounds[ring + 1]) / 2.0
            bearings[c] = -sensors.fov_total / 2.0 + (sector + 0.5) * width
    return ranges, bearings


def to_sensor_frame(world: WorldState, ego: int, x, y):
    """Range and bearing of world points relative to the ego pose."""
    dx = np.asarray(x, dtype=float) - world.x[ego]
    dy = np.asarray(y, dtype=float) - world.y[ego]
    return np.hypot(dx, dy), wrap_angle(np.arctan2(dy, dx) - world.heading[ego])


def _sight_blocked(world: WorldState, ego: int, px, py, exclude=None, boxes=None):
    """Block mask for sight lines ego -> (px, py); footprint ``exclude[m]`` is ignored for line m."""
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    if boxes is None:
        boxes = world.boxes()
    # only footprints that can reach the sensing disk matter
    reach = np.hypot(world.x - world.x[ego], world.y - world.y[ego]) - 0.5 * np.hypot(world.length, world.width)
    far = np.max(np.hypot(px - world.x[ego], py - world.y[ego]), initial=0.0)
    cand = np.flatnonzero(reach <= far)
    cand = cand[cand != ego]
    p0 = np.broadcast_to([world.x[ego], world.y[ego]], (len(px), 2))
    p1 = np.stack([px, py], axis=1)
    hits = segments_hit_boxes(p0, p1, boxes[cand])
    if exclude is not None:
        hits &= cand[None, :] != np.asarray(exclude)[:, None]
    return hits.any(axis=1)


def local_detections(world: WorldState, ego: int, sensors: SensorConfig = SensorConfig(), boxes=None) -> list[DetectedObject]:
    """Moving entities the ego sees directly, ordered by id."""
    rng_, brg = to_sensor_frame(world, ego, world.x, world.y)
    half = sensors.fov_total / 2.0
    visible = world.moving_mask & (rng_ <= sensors.max_range) & (np.abs(brg) <= half)
    visible[ego] = False
    cand = np.flatnonzero(visible)
    if len(cand) == 0:
        return []
    blocked = _sight_blocked(world, ego, world.x[cand], world.y[cand], exclude=cand, boxes=boxes)
    out = []
    for i in cand[~blocked]:
        out.append(DetectedObject(
            object_id=int(i),
            kind=Kind(int(world.kind[i])),
            range=float(rng_[i]),
            bearing=float(brg[i]),
            orientation=float(wrap_angle(world.heading[i] - world.heading[ego])),
            detected_tick=int(world.tick),
        ))
    return out


@dataclass(frozen=True)
class Evidence:
    """Per-cell factor arrays for one ego at one tick."""

    local: np.ndarray  # Local values as ints
    bsm_seen: np.ndarray
    cpm_seen: np.ndarray
    object_from_cpm: np.ndarray


def local_factor(world: WorldState, ego: int, detections: Sequence[DetectedObject],
                 sensors: SensorConfig = SensorConfig(), boxes=None) -> np.ndarray:
    """Empty / Occupied / Occluded per cell from local sensing only."""
    local = np.full(N_CELLS, Local.EMPTY.value)
    if detections:
        cells = cell_of([d.range for d in detections], [d.bearing for d in detections], sensors)
        cells = np.atleast_1d(cells)
        local[cells[cells >= 0]] = Local.OCCUPIED.value
    free = np.flatnonzero(local == Local.EMPTY.value)
    if len(free):
        r, b = cell_centers(sensors)
        h = world.heading[ego] + b[free]
        px = world.x[ego] + r[free] * np.cos(h)
        py = world.y[ego] + r[free] * np.sin(h)
        blocked = _sight_blocked(world, ego, px, py, boxes=boxes)
        local[free[blocked]] = Local.OCCLUDED.value
    return local


def build_projection(world: WorldState, ego: int, detections: Sequence[DetectedObject],
                     inbox: Iterable = (), sensors: SensorConfig = SensorConfig(), boxes=None) -> np.ndarray:
    """Category id (1..13) of each of the 15 cells.

    ``inbox`` holds the BSMs and CPMs most recently delivered to ``ego``.
    Transmitter cells use the position reported in the message; object cells
    use the absolute position reconstructed from the CPM record.
    """
    return categories_from_evidence(projection_evidence(world, ego, detections, inbox, sensors, boxes))


def inbox_points(inbox: Iterable):
    """Split an inbox into BSM sender, CPM sender and CPM object positions, each (k, 2)."""
    from .v2x import Bsm, Cpm  # local import: v2x depends on this module

    bsm, cpm, obj = [], [], []
    for msg in inbox:
        if isinstance(msg, Bsm):
            bsm.append(msg.position)
        elif isinstance(msg, Cpm):
            cpm.append(msg.position)
            obj.extend(record_positions(msg.position, msg.heading, msg.records))
    return tuple(np.asarray(v, dtype=float).reshape(-1, 2) for v in (bsm, cpm, obj))


def record_positions(position, heading: float, records: Sequence[DetectedObject]) -> np.ndarray:
    """Absolute positions of CPM records given the sender reference pose."""
    if not records:
        return np.zeros((0, 2))
    r = np.array([rec.range for rec in records])
    a = heading + np.array([rec.bearing for rec in records])
    return np.stack([position[0] + r * np.cos(a), position[1] + r * np.sin(a)], axis=1)


def projection_evidence(world, ego, detections, inbox=(), sensors: SensorConfig = SensorConfig(),
                        boxes=None, points=None) -> Evidence:
    """Cell factors for ``ego``; ``points`` may carry a pre-split inbox from :func:`inbox_points`."""
    local = local_factor(world, ego, detections, sensors, boxes)
    bsm_xy, cpm_xy, obj_xy = inbox_points(inbox) if points is None else points
    flags = []
    for xy in (bsm_xy, cpm_xy, obj_xy):
        f = np.zeros(N_CELLS, dtype=bool)
        if len(xy):
            c = np.atleast_1d(cell_of(*to_sensor_frame(world, ego, xy[:, 0], xy[:, 1]), sensors))
            f[c[c >= 0]] = True
        flags.append(f)
    bsm_seen, cpm_seen, obj = flags
    # a received CPM also proves its sender is beaconing
    bsm_seen |= cpm_seen
    return Evidence(local, bsm_seen, cpm_seen, obj)


def categories_from_evidence(ev: Evidence) -> np.ndarray:
    # vectorized form of categorize(); the table is exhaustively tested against it
    code = ev.bsm_seen.astype(int) * 4 + ev.cpm_seen.astype(int) * 2 + ev.object_from_cpm.astype(int)
    offset = np.array([0, 1, -1, -1, 2, 3, 4, 5])[code]
    if np.any(offset < 0):
        raise InvalidCombination("cpm_seen without bsm_seen")
    cat = np.where(ev.local == Local.OCCUPIED.value, 2 + offset, 8 + offset)
    return np.where(ev.local == Local.EMPTY.value, 1, cat).astype(int)


def mirror_cell(cell: int) -> int:
    """Cell index after mirroring the scene about the sensor axis."""
    sector, ring = divmod(cell, N_RINGS)
    return (N_SECTORS - 1 - sector) * N_RINGS + ring
