"""Ground truth: entities, built-in intersection maps, scenario generation and stepping.

The road layout is two orthogonal two-way roads crossing at an all-way stop.
Every lane is a closed loop of length ``2 * half_length``: a vehicle leaving the
map re-enters at the opposite end of its lane, so entity count is constant
and a route covers any episode length. Pedestrians and cyclists circulate on
rectangular loops around each corner block and never enter the carriageway.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterable, Iterator

import numpy as np

from .geometry import boxes_overlap

DT = 0.1  # seconds per tick

# car-following and stop-sign parameters
HEADWAY = 8.0
MIN_GAP = 1.0
SPAWN_GAP = 3.0
MAX_ACCEL = 2.0
COMFORT_DECEL = 3.0
STOP_ZONE = 1.0
STOP_TICKS = 10

PEDESTRIAN_SPEED = 1.4
BICYCLIST_SPEED = 4.0

BIKE_LOOP_OFFSET = 9.5
WALK_LOOP_OFFSET = 11.0
FURNITURE_OFFSET = 8.1


class CapacityError(ValueError):
    """Raised when a scenario asks for more entities than the map can hold."""


class Kind(IntEnum):
    CAR = 0
    BUS = 1
    TRUCK = 2
    BICYCLIST = 3
    PEDESTRIAN = 4
    STATIC_OBSTACLE = 5


CONNECTED_KINDS = frozenset({Kind.CAR, Kind.BUS, Kind.TRUCK})
MOVING_KINDS = frozenset(Kind) - {Kind.STATIC_OBSTACLE}

FOOTPRINT = {
    Kind.CAR: (4.54, 1.76),
    Kind.BUS: (12.0, 2.5),
    Kind.TRUCK: (8.0, 2.5),
    Kind.BICYCLIST: (1.8, 0.6),
    Kind.PEDESTRIAN: (0.5, 0.5),
}

# (length, width) of roadside furniture: tree, pole, sign, shelter
FURNITURE = ((1.0, 1.0), (0.3, 0.3), (0.6, 0.2), (5.0, 1.0))

QUADRANT_SIGNS = ((1, 1), (-1, 1), (-1, -1), (1, -1))


@dataclass(frozen=True)
class Entity:
    id: int
    kind: Kind
    x: float
    y: float
    heading: float
    speed: float
    length: float
    width: float
    connected: bool

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("footprint dimensions must be positive")
        if self.connected and self.kind not in CONNECTED_KINDS:
            raise ValueError(f"{self.kind.name} cannot be connected")


@dataclass(frozen=True)
class RoadMap:
    """Built-in intersection layout.

    Each building is ``(quadrant, (x0, y0, x1, y1))`` with extents given as
    first-quadrant offsets from the crossing point, mirrored into ``quadrant``.
    """

    name: str
    center: tuple[float, float]
    half_length: float
    lanes_per_direction: int = 2
    lane_width: float = 3.5
    buildings: tuple[tuple[int, tuple[float, float, float, float]], ...] = ()

    @property
    def loop_length(self) -> float:
        return 2.0 * self.half_length

    @property
    def box_half(self) -> float:
        return self.lanes_per_direction * self.lane_width

    @property
    def stop_line(self) -> float:
        """Lane coordinate of the stop line (front bumper)."""
        return self.half_length - self.box_half - 1.0

    @property
    def box_exit(self) -> float:
        return self.half_length + self.box_half

    @property
    def n_lanes(self) -> int:
        return 4 * self.lanes_per_direction

    def lane_direction(self, lane: int) -> int:
        """0 east, 1 north, 2 west, 3 south."""
        return lane // self.lanes_per_direction

    def lane_pose(self, lane: int, u):
        """World (x, y, heading) of lane coordinate ``u``."""
        d = self.lane_direction(lane)
        k = lane % self.lanes_per_direction
        heading = d * math.pi / 2.0
        c, s = math.cos(heading), math.sin(heading)
        lat = (k + 0.5) * self.lane_width
        along = np.asarray(u, dtype=float) - self.half_length
        x = self.center[0] + c * along + s * lat
        y = self.center[1] + s * along - c * lat
        return x, y, np.full_like(x, heading if heading <= math.pi else heading - 2 * math.pi)

    def walk_loop(self, quadrant: int, bike: bool) -> "LoopPath":
        inner = BIKE_LOOP_OFFSET if bike else WALK_LOOP_OFFSET
        outer = self.half_length - (5.0 if bike else 6.5)
        sx, sy = QUADRANT_SIGNS[quadrant]
        return LoopPath(self.center, sx, sy, inner, outer)

    def building_boxes(self) -> list[tuple[float, float, float, float, float]]:
        out = []
        for quadrant, (x0, y0, x1, y1) in self.buildings:
            sx, sy = QUADRANT_SIGNS[quadrant]
            cx = self.center[0] + sx * (x0 + x1) / 2.0
            cy = self.center[1] + sy * (y0 + y1) / 2.0
            out.append((cx, cy, 0.0, x1 - x0, y1 - y0))
        return out


@dataclass(frozen=True)
class LoopPath:
    """Axis-aligned rectangular loop around one corner block."""

    center: tuple[float, float]
    sx: int
    sy: int
    inner: float
    outer: float

    @property
    def side(self) -> float:
        return self.outer - self.inner

    @property
    def perimeter(self) -> float:
        return 4.0 * self.side

    def pose(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        side = self.side
        seg = np.minimum((s // side).astype(int), 3)
        r = s - seg * side
        a, b = self.inner, self.outer
        # local first-quadrant coordinates, counter-clockwise in local frame
        px = np.choose(seg, [a + r, b, b - r, a])
        py = np.choose(seg, [a, a + r, b, b - r])
        dx = np.choose(seg, [1.0, 0.0, -1.0, 0.0]) * self.sx
        dy = np.choose(seg, [0.0, 1.0, 0.0, -1.0]) * self.sy
        x = self.center[0] + self.sx * px
        y = self.center[1] + self.sy * py
        return x, y, np.arctan2(dy, dx)


MAPS: dict[str, RoadMap] = {
    # training map: four corner buildings close to the junction
    "map1": RoadMap(
        name="map1",
        center=(0.0, 0.0),
        half_length=150.0,
        buildings=(
            (0, (14.0, 14.0, 48.0, 40.0)),
            (1, (16.0, 13.5, 40.0, 52.0)),
            (2, (13.5, 15.0, 44.0, 44.0)),
            (3, (15.0, 14.0, 36.0, 60.0)),
        ),
    ),
    # evaluation map: offset junction, longer arms, one open corner
    "map2": RoadMap(
        name="map2",
        center=(35.0, -20.0),
        half_length=170.0,
        buildings=(
            (0, (13.5, 13.5, 60.0, 30.0)),
            (1, (20.0, 14.0, 38.0, 38.0)),
            (3, (14.0, 13.5, 30.0, 70.0)),
            (3, (14.0, 80.0, 45.0, 110.0)),
        ),
    ),
}


def get_map(map_id: str) -> RoadMap:
    try:
        return MAPS[map_id]
    except KeyError:
        raise KeyError(f"unknown map {map_id!r}; choose from {sorted(MAPS)}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    map_id: str = "map1"
    vehicle_count: int = 50
    episode_ticks: int = 1600
    rng_seed: int = 0
    static_obstacle_count: int = 24
    non_connected_count: int = 16

    def __post_init__(self):
        if self.episode_ticks <= 0:
            raise ValueError("episode_ticks must be positive")
        if self.vehicle_count < 1:
            raise ValueError("vehicle_count must be at least 1")
        if self.static_obstacle_count < 0 or self.non_connected_count < 0:
            raise ValueError("entity counts must be non-negative")


@dataclass
class Routes:
    """Static route plan fixed at generation time.

    ``path`` is 0 for lane followers, 1 for loop walkers, 2 for static
    entities; ``path_id`` is the lane index or the loop index.
    """

    road_map: RoadMap
    path: np.ndarray
    path_id: np.ndarray
    desired_speed: np.ndarray
    loops: list[LoopPath]
    lane_members: list[np.ndarray]
    walker_members: list[np.ndarray]


@dataclass
class WorldState:
    """Struct-of-arrays snapshot at one tick. Entity ids equal array indices."""

    tick: int
    kind: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    length: np.ndarray
    width: np.ndarray
    connected: np.ndarray
    # mobility bookkeeping
    progress: np.ndarray
    wait: np.ndarray
    arrival: np.ndarray
    granted: np.ndarray
    release: np.ndarray

    @property
    def n(self) -> int:
        return len(self.kind)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    @classmethod
    def from_entities(cls, entities: Iterable[Entity], tick: int = 0) -> "WorldState":
        """Frozen snapshot built from explicit entities (ids must be 0..n-1 in order)."""
        ents = list(entities)
        if [e.id for e in ents] != list(range(len(ents))):
            raise ValueError("entity ids must be 0..n-1 in order")
        n = len(ents)

        def col(name, dt=float):
            return np.array([getattr(e, name) for e in ents], dtype=dt)

        return cls(
            tick=tick, kind=col("kind", int), x=col("x"), y=col("y"), heading=col("heading"),
            speed=col("speed"), accel=np.zeros(n), length=col("length"), width=col("width"),
            connected=col("connected", bool), progress=np.zeros(n), wait=np.zeros(n, dtype=int),
            arrival=np.full(n, -1, dtype=int), granted=np.zeros(n, dtype=bool), release=np.zeros(n),
        )

    def copy(self) -> "WorldState":
        return replace(self, **{f: getattr(self, f).copy() for f in _ARRAY_FIELDS})

    def check_id(self, entity_id: int) -> int:
        if not 0 <= entity_id < self.n:
            raise KeyError(f"unknown entity id {entity_id}")
        return int(entity_id)

    def entity(self, entity_id: int) -> Entity:
        i = self.check_id(entity_id)
        return Entity(
            id=i,
            kind=Kind(int(self.kind[i])),
            x=float(self.x[i]),
            y=float(self.y[i]),
            heading=float(self.heading[i]),
            speed=float(self.speed[i]),
            length=float(self.length[i]),
            width=float(self.width[i]),
            connected=bool(self.connected[i]),
        )

    def entities(self) -> Iterator[Entity]:
        for i in range(self.n):
            yield self.entity(i)

    def boxes(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.heading, self.length, self.width], axis=1)

    @property
    def connected_ids(self) -> np.ndarray:
        return np.flatnonzero(self.connected)

    @property
    def moving_mask(self) -> np.ndarray:
        return self.kind != Kind.STATIC_OBSTACLE


_ARRAY_FIELDS = (
    "kind", "x", "y", "heading", "speed", "accel", "length", "width", "connected",
    "progress", "wait", "arrival", "granted", "release",
)


def _pack(rng, lengths, region, gap):
    """Random non-overlapping 1-D placement; returns rear offsets in order."""
    need = float(np.sum(lengths)) + gap * len(lengths)
    slack = region - need
    if slack < 0:
        return None
    offs = np.sort(rng.uniform(0.0, slack, size=len(lengths)))
    rears = offs + np.concatenate([[0.0], np.cumsum(np.asarray(lengths) + gap)[:-1]])
    return rears


def generate_scenario(config: ScenarioConfig) -> tuple[WorldState, Routes]:
    """Deterministically place vehicles, walkers and obstacles for ``config``."""
    rm = get_map(config.map_id)
    rng = np.random.default_rng(config.rng_seed)

    kinds: list[int] = []
    lens: list[float] = []
    wids: list[float] = []
    path: list[int] = []
    path_id: list[int] = []
    vdes: list[float] = []
    progress: list[float] = []

    # connected vehicles
    draw = rng.random(config.vehicle_count)
    vkinds = np.where(draw < 0.8, Kind.CAR, np.where(draw < 0.9, Kind.BUS, Kind.TRUCK))
    lane_order = rng.permutation(rm.n_lanes)
    lane_of = lane_order[np.arange(config.vehicle_count) % rm.n_lanes]
    region_start = rm.box_exit + 1.0
    region = rm.loop_length - (region_start - (rm.stop_line - STOP_ZONE))
    lane_members = []
    for lane in range(rm.n_lanes):
        members = np.flatnonzero(lane_of == lane)
        lane_members.append(members)
        if len(members) == 0:
            continue
        lengths = [FOOTPRINT[Kind(vkinds[i])][0] for i in members]
        rears = _pack(rng, lengths, region, SPAWN_GAP)
        if rears is None:
            raise CapacityError(
                f"{config.vehicle_count} vehicles exceed lane capacity of {rm.name}"
            )
        for i, rear, ln in zip(members, rears, lengths):
            fronts = (region_start + rear + ln) % rm.loop_length
            progress_i = float(fronts)
            k = Kind(vkinds[i])
            kinds.append(int(k))
            lens.append(FOOTPRINT[k][0])
            wids.append(FOOTPRINT[k][1])
            path.append(0)
            path_id.append(lane)
            progress.append(progress_i)
    # vehicles were appended lane by lane; restore id order by vehicle index
    order = np.argsort(np.concatenate([m for m in lane_members if len(m)]), kind="stable")
    kinds = [kinds[j] for j in order]
    lens = [lens[j] for j in order]
    wids = [wids[j] for j in order]
    path = [path[j] for j in order]
    path_id = [path_id[j] for j in order]
    progress = [progress[j] for j in order]
    lo = {Kind.CAR: (9.0, 13.0), Kind.BUS: (7.0, 9.0), Kind.TRUCK: (7.0, 10.0)}
    for i in range(config.vehicle_count):
        a, b = lo[Kind(kinds[i])]
        vdes.append(float(rng.uniform(a, b)))

    # pedestrians and bicyclists on corner loops
    loops = [rm.walk_loop(q, bike) for bike in (True, False) for q in range(4)]
    n_bike = config.non_connected_count // 3
    walker_kinds = [Kind.BICYCLIST] * n_bike + [Kind.PEDESTRIAN] * (config.non_connected_count - n_bike)
    walker_loop = []
    for j, k in enumerate(walker_kinds):
        # bicyclists on the outer loops 0..3, pedestrians on inner loops 4..7
        rank = j if k == Kind.BICYCLIST else j - n_bike
        walker_loop.append(rank % 4 + (0 if k == Kind.BICYCLIST else 4))
    base = len(kinds)
    walker_members = []
    walker_progress = {}
    for li, loop in enumerate(loops):
        members = [j for j, l in enumerate(walker_loop) if l == li]
        walker_members.append(np.array([base + j for j in members], dtype=int))
        if not members:
            continue
        lengths = [FOOTPRINT[walker_kinds[j]][0] for j in members]
        rears = _pack(rng, lengths, loop.perimeter - 2.0, 2.0)
        if rears is None:
            raise CapacityError("too many pedestrians/cyclists for the walkways")
        start = rng.uniform(0.0, loop.perimeter)
        for j, rear, ln in zip(members, rears, lengths):
            walker_progress[base + j] = (start + rear + ln / 2.0) % loop.perimeter
    for j, k in enumerate(walker_kinds):
        kinds.append(int(k))
        lens.append(FOOTPRINT[k][0])
        wids.append(FOOTPRINT[k][1])
        path.append(1)
        path_id.append(walker_loop[j])
        vdes.append(BICYCLIST_SPEED if k == Kind.BICYCLIST else PEDESTRIAN_SPEED)
        progress.append(walker_progress[base + j])

    # buildings and roadside furniture
    statics = list(rm.building_boxes())
    strips = [(q, axis) for q in range(4) for axis in (0, 1)]
    per_strip = np.bincount(np.arange(config.static_obstacle_count) % 8, minlength=8)
    per_strip = per_strip[rng.permutation(8)]
    strip_start, strip_end = 12.0, rm.half_length - 8.0
    for (q, axis), count in zip(strips, per_strip):
        if count == 0:
            continue
        kinds_f = rng.integers(0, len(FURNITURE), size=count)
        lengths = [FURNITURE[f][0] for f in kinds_f]
        rears = _pack(rng, lengths, strip_end - strip_start, 1.0)
        if rears is None:
            raise CapacityError("too many static obstacles for the roadside strips")
        sx, sy = QUADRANT_SIGNS[q]
        for f, rear in zip(kinds_f, rears):
            ln, wd = FURNITURE[f]
            along = strip_start + rear + ln / 2.0
            if axis == 0:
                statics.append((rm.center[0] + sx * along, rm.center[1] + sy * FURNITURE_OFFSET, 0.0, ln, wd))
            else:
                statics.append((rm.center[0] + sx * FURNITURE_OFFSET, rm.center[1] + sy * along, math.pi / 2, ln, wd))
    for box in statics:
        kinds.append(int(Kind.STATIC_OBSTACLE))
        lens.append(box[3])
        wids.append(box[4])
        path.append(2)
        path_id.append(-1)
        vdes.append(0.0)
        progress.append(0.0)

    n = len(kinds)
    routes = Routes(
        road_map=rm,
        path=np.array(path, dtype=int),
        path_id=np.array(path_id, dtype=int),
        desired_speed=np.array(vdes, dtype=float),
        loops=loops,
        lane_members=lane_members,
        walker_members=walker_members,
    )
    world = WorldState(
        tick=0,
        kind=np.array(kinds, dtype=int),
        x=np.zeros(n),
        y=np.zeros(n),
        heading=np.zeros(n),
        speed=np.zeros(n),
        accel=np.zeros(n),
        length=np.array(lens, dtype=float),
        width=np.array(wids, dtype=float),
        connected=np.isin(np.array(kinds), [int(k) for k in CONNECTED_KINDS]),
        progress=np.array(progress, dtype=float),
        wait=np.zeros(n, dtype=int),
        arrival=np.full(n, -1, dtype=int),
        granted=np.zeros(n, dtype=bool),
        release=np.zeros(n),
    )
    static_idx = np.flatnonzero(routes.path == 2)
    sb = np.array(statics, dtype=float).reshape(-1, 5)
    world.x[static_idx], world.y[static_idx], world.heading[static_idx] = sb[:, 0], sb[:, 1], sb[:, 2]
    _update_poses(world, routes)
    if count_overlaps(world):
        raise CapacityError("scenario placement produced overlapping footprints")
    return world, routes


def _update_poses(world: WorldState, routes: Routes) -> None:
    rm = routes.road_map
    for lane, members in enumerate(routes.lane_members):
        if len(members) == 0:
            continue
        center_u = world.progress[members] - world.length[members] / 2.0
        x, y, h = rm.lane_pose(lane, center_u)
        world.x[members], world.y[members], world.heading[members] = x, y, h
    for li, members in enumerate(routes.walker_members):
        if len(members) == 0:
            continue
        x, y, h = routes.loops[li].pose(world.progress[members])
        world.x[members], world.y[members], world.heading[members] = x, y, h


def _leader_gaps(world: WorldState, rm: RoadMap, members: np.ndarray) -> np.ndarray:
    """Gap from each member's front bumper to its leader's rear bumper."""
    if len(members) == 1:
        return np.array([np.inf])
    u = world.progress[members]
    order = np.argsort(u, kind="stable")
    ordered = members[order]
    leaders = np.roll(ordered, -1)
    gaps_ordered = np.mod(world.progress[leaders] - world.length[leaders] - world.progress[ordered], rm.loop_length)
    gaps = np.empty(len(members))
    gaps[order] = gaps_ordered
    return gaps


def _grant_entries(world: WorldState, routes: Routes, gaps: dict[int, float]) -> None:
    rm = routes.road_map
    vehicles = np.flatnonzero(routes.path == 0)
    held_axes = {rm.lane_direction(routes.path_id[i]) % 2 for i in vehicles if world.granted[i]}
    waiting = [
        i for i in vehicles
        if not world.granted[i] and world.wait[i] >= STOP_TICKS
    ]
    waiting.sort(key=lambda i: (world.arrival[i], i))
    for i in waiting:
        axis = rm.lane_direction(routes.path_id[i]) % 2
        if (1 - axis) in held_axes:
            break
        need = rm.box_exit - world.progress[i] + world.length[i] + MIN_GAP
        if gaps[i] < need:
            continue
        world.granted[i] = True
        world.release[i] = rm.box_exit + world.length[i] - world.progress[i]
        held_axes.add(axis)


def step(world: WorldState, routes: Routes) -> WorldState:
    """Advance ground truth by one 100 ms tick."""
    rm = routes.road_map
    new = world.copy()
    new.tick = world.tick + 1

    gaps: dict[int, float] = {}
    for members in routes.lane_members:
        if len(members):
            for i, g in zip(members, _leader_gaps(world, rm, members)):
                gaps[int(i)] = float(g)
    _grant_entries(new, routes, gaps)

    for i, gap in gaps.items():
        v = world.speed[i]
        vmax = min(routes.desired_speed[i], v + MAX_ACCEL * DT)
        room = max(0.0, gap - MIN_GAP)
        if gap < HEADWAY:
            vmax = min(vmax, room / 1.0)
        vmax = min(vmax, room / DT)
        if not new.granted[i]:
            d = (rm.stop_line - world.progress[i]) % rm.loop_length
            if d < STOP_ZONE:
                vmax = 0.0
            else:
                target = d - STOP_ZONE / 2.0
                vmax = min(vmax, math.sqrt(2.0 * COMFORT_DECEL * target), target / DT)
        v_new = max(0.0, vmax)
        new.speed[i] = v_new
        new.accel[i] = (v_new - v) / DT
        new.progress[i] = (world.progress[i] + v_new * DT) % rm.loop_length
        if new.granted[i]:
            new.release[i] -= v_new * DT
            if new.release[i] <= 0.0:
                new.granted[i] = False
                new.wait[i] = 0
        else:
            d_new = (rm.stop_line - new.progress[i]) % rm.loop_length
            if d_new < STOP_ZONE and v_new == 0.0:
                if new.wait[i] == 0:
                    new.arrival[i] = new.tick
                new.wait[i] += 1
            else:
                new.wait[i] = 0

    walkers = np.flatnonzero(routes.path == 1)
    new.speed[walkers] = routes.desired_speed[walkers]
    new.progress[walkers] = world.progress[walkers] + routes.desired_speed[walkers] * DT
    for li, members in enumerate(routes.walker_members):
        if len(members):
            new.progress[members] %= routes.loops[li].perimeter
    _update_poses(new, routes)
    return new


def count_overlaps(world: WorldState) -> int:
    """Number of overlapping footprint pairs (the scenario invariant says zero)."""
    boxes = world.boxes()
    ov = boxes_overlap(boxes, boxes)
    return int(np.triu(ov, 1).sum())


def objects_within(world: WorldState, center: int, radius: float) -> set[int]:
    """Ids whose center-to-center distance from ``center`` is at most ``radius``."""
    c = world.check_id(center)
    d = np.hypot(world.x - world.x[c], world.y - world.y[c])
    hit = d <= radius
    hit[c] = False
    return set(int(i) for i in np.flatnonzero(hit))


def run_ground_truth(world: WorldState, routes: Routes, ticks: int) -> Iterator[WorldState]:
    """Yield ``ticks`` consecutive states starting with ``world``."""
    for _ in range(ticks):
        yield world
        world = step(world, routes)


TRAJECTORY_COLUMNS = ("tick", "id", "kind", "x", "y", "heading", "speed")


def trajectory_rows(world: WorldState) -> Iterator[tuple]:
    for i in range(world.n):
        yield (
            world.tick, i, Kind(int(world.kind[i])).name.lower(),
            round(float(world.x[i]), 4), round(float(world.y[i]), 4),
            round(float(world.heading[i]), 6), round(float(world.speed[i]), 4),
        )


def write_trajectory_csv(states: Iterable[WorldState], path) -> int:
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for w in states:
            for row in trajectory_rows(w):
                writer.writerow(row)
                rows += 1
    return rows
