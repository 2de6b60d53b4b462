"""Road network, vehicle population and discrete-time integration.

Vehicles move along straight single-lane roads laid out on a grid.  Every
lane is stored as a struct of arrays sorted by position (entry first), which
keeps the per-step work vectorised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

LANE_LENGTH = 150.0
LANE_WIDTH = 3.5
VEHICLE_SIZE = 2.0
V_MIN, V_MAX = 6.0, 13.0
A_MIN, A_MAX = -3.0, 3.0
DT = 0.1
INITIAL_VELOCITY = 10.0
MIN_SPAWN_GAP = 10.0


@dataclass(frozen=True)
class Lane:
    index: int
    axis: str  # "h" or "v"
    direction: int  # +1 or -1
    road: int  # row for horizontal lanes, column for vertical ones
    length: float
    # intersection ids in driving order and the matching centre positions
    intersections: tuple[int, ...]
    centers: tuple[float, ...]

    @property
    def name(self) -> str:
        tag = {("h", 1): "EB", ("h", -1): "WB", ("v", 1): "NB", ("v", -1): "SB"}
        return f"{tag[self.axis, self.direction]}{self.road}"


class RoadNetwork:
    """A ``rows x cols`` grid of four-way single-lane intersections.

    Intersections are ``lane_length`` apart and every lane starts and ends
    ``lane_length`` away from the outermost intersection it crosses.
    Right-hand traffic: eastbound drives south of the road centre line,
    northbound east of it.
    """

    def __init__(self, grid_rows: int = 1, grid_cols: int = 1,
                 lane_length: float = LANE_LENGTH, lane_width: float = LANE_WIDTH):
        if int(grid_rows) != grid_rows or int(grid_cols) != grid_cols:
            raise ValueError("grid dimensions must be integers")
        if grid_rows < 1 or grid_cols < 1:
            raise ValueError(f"invalid grid {grid_rows}x{grid_cols}")
        if lane_length <= 0 or lane_width < 0:
            raise ValueError("lane_length must be positive and lane_width non-negative")
        self.grid_rows = int(grid_rows)
        self.grid_cols = int(grid_cols)
        self.lane_length = float(lane_length)
        self.lane_width = float(lane_width)
        self.width = (self.grid_cols + 1) * self.lane_length  # extent along x
        self.height = (self.grid_rows + 1) * self.lane_length  # extent along y
        self.intersection_centers = [
            ((c + 1) * self.lane_length, (r + 1) * self.lane_length)
            for r in range(self.grid_rows) for c in range(self.grid_cols)
        ]
        lanes = []
        for r in range(self.grid_rows):
            for d in (1, -1):
                ids = [r * self.grid_cols + c for c in range(self.grid_cols)]
                xs = [(c + 1) * self.lane_length for c in range(self.grid_cols)]
                if d < 0:
                    ids, xs = ids[::-1], [self.width - x for x in xs[::-1]]
                lanes.append(Lane(len(lanes), "h", d, r, self.width, tuple(ids), tuple(xs)))
        for c in range(self.grid_cols):
            for d in (1, -1):
                ids = [r * self.grid_cols + c for r in range(self.grid_rows)]
                ys = [(r + 1) * self.lane_length for r in range(self.grid_rows)]
                if d < 0:
                    ids, ys = ids[::-1], [self.height - y for y in ys[::-1]]
                lanes.append(Lane(len(lanes), "v", d, c, self.height, tuple(ids), tuple(ys)))
        self.lanes: list[Lane] = lanes
        self._conflicts = None

    def __repr__(self) -> str:
        return f"RoadNetwork({self.grid_rows}x{self.grid_cols}, lane_length={self.lane_length})"

    def offset(self, lane: Lane) -> float:
        """Transverse offset of a lane from its road centre line."""
        half = self.lane_width / 2.0
        if lane.axis == "h":
            return -half if lane.direction > 0 else half
        return half if lane.direction > 0 else -half

    def to_xy(self, lane: Lane, s):
        """Map positions along ``lane`` to plane coordinates."""
        s = np.asarray(s, dtype=float)
        if lane.axis == "h":
            x = s if lane.direction > 0 else self.width - s
            y = np.full_like(s, (lane.road + 1) * self.lane_length + self.offset(lane))
        else:
            y = s if lane.direction > 0 else self.height - s
            x = np.full_like(s, (lane.road + 1) * self.lane_length + self.offset(lane))
        return x, y

    def lane_coordinate(self, lane: Lane, x: float, y: float) -> float:
        """Position along ``lane`` of the plane point lying on it."""
        if lane.axis == "h":
            return x if lane.direction > 0 else self.width - x
        return y if lane.direction > 0 else self.height - y

    @property
    def conflicts(self):
        if self._conflicts is None:
            from .virtual_lane import conflict_points
            self._conflicts = conflict_points(self)
        return self._conflicts


@dataclass(frozen=True)
class Vehicle:
    id: int
    lane: int
    position: float = 0.0
    velocity: float = INITIAL_VELOCITY
    acceleration: float = 0.0
    size: float = VEHICLE_SIZE


@dataclass
class SimClock:
    step_index: int = 0
    step_duration: float = DT

    def __post_init__(self):
        if not self.step_duration > 0:
            raise ValueError("step_duration must be positive")

    @property
    def time(self) -> float:
        return self.step_index * self.step_duration


@dataclass
class SpawnProcess:
    per_lane_rate: float
    rng: np.random.Generator
    min_spawn_gap: float = MIN_SPAWN_GAP
    pending: int = 0  # arrivals waiting for the entry to clear

    def __post_init__(self):
        if not self.per_lane_rate >= 0:
            raise ValueError(f"arrival rate must be >= 0, got {self.per_lane_rate}")

    def arrival_probability(self, dt: float) -> float:
        return self.per_lane_rate * dt / 3600.0


@dataclass(frozen=True)
class CollisionEvent:
    step_index: int
    vehicle_a: int
    vehicle_b: int
    virtual_lane: int  # base lane of the shared (virtual) lane
    gap: float


@dataclass(frozen=True)
class Kinematics:
    """Velocity/acceleration limits applied by the integrator."""
    v_min: float = V_MIN
    v_max: float = V_MAX
    a_min: float = A_MIN
    a_max: float = A_MAX


def _check_finite(**values):
    for k, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"{k} must be finite, got {v!r}")


def step_vehicle(vehicle: Vehicle, commanded_accel: float, dt: float = DT,
                 limits: Kinematics = Kinematics()) -> Vehicle:
    """Advance one vehicle by ``dt`` under its held acceleration.

    The acceleration stored on ``vehicle`` drives this interval; the
    commanded value (clamped) is stored for the next one.  When the raw
    velocity leaves the admissible band, the position advances by the
    trapezoid of the endpoint velocities instead of the quadratic formula.
    """
    _check_finite(position=vehicle.position, velocity=vehicle.velocity,
                  acceleration=vehicle.acceleration, commanded_accel=commanded_accel, dt=dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, v, a = vehicle.position, vehicle.velocity, vehicle.acceleration
    v_raw = v + a * dt
    if limits.v_min <= v_raw <= limits.v_max:
        x_new, v_new = x + v * dt + 0.5 * a * dt * dt, v_raw
    else:
        v_new = min(max(v_raw, limits.v_min), limits.v_max)
        x_new = x + 0.5 * (v + v_new) * dt
    a_new = min(max(commanded_accel, limits.a_min), limits.a_max)
    return replace(vehicle, position=x_new, velocity=v_new, acceleration=a_new)


def integrate(x: np.ndarray, v: np.ndarray, a: np.ndarray, dt: float,
              limits: Kinematics = Kinematics()):
    """Vectorised twin of :func:`step_vehicle` (positions and velocities)."""
    v_raw = v + a * dt
    v_new = np.clip(v_raw, limits.v_min, limits.v_max)
    inside = v_raw == v_new
    x_new = np.where(inside, x + v * dt + 0.5 * a * dt * dt, x + 0.5 * (v + v_new) * dt)
    return x_new, v_new


class LaneState:
    """Vehicles on one lane, sorted by ascending position."""

    __slots__ = ("ids", "x", "v", "a")

    def __init__(self, ids=None, x=None, v=None, a=None):
        self.ids = np.asarray([] if ids is None else ids, dtype=np.int64)
        self.x = np.asarray([] if x is None else x, dtype=float)
        self.v = np.asarray([] if v is None else v, dtype=float)
        self.a = np.asarray([] if a is None else a, dtype=float)

    def __len__(self):
        return len(self.ids)

    def copy(self) -> "LaneState":
        return LaneState(self.ids.copy(), self.x.copy(), self.v.copy(), self.a.copy())

    def keep(self, mask: np.ndarray) -> None:
        self.ids, self.x, self.v, self.a = self.ids[mask], self.x[mask], self.v[mask], self.a[mask]

    def sort(self) -> None:
        order = np.lexsort((self.ids, self.x))
        self.keep(order)


class Traffic:
    """Per-lane vehicle arrays; the snapshot every controller reads."""

    def __init__(self, network: RoadNetwork, lanes: Sequence[LaneState] | None = None):
        self.network = network
        self.lanes = list(lanes) if lanes is not None else [LaneState() for _ in network.lanes]

    @classmethod
    def from_vehicles(cls, network: RoadNetwork, vehicles: Iterable[Vehicle]) -> "Traffic":
        buckets: dict[int, list[Vehicle]] = {i: [] for i in range(len(network.lanes))}
        for veh in vehicles:
            buckets[veh.lane].append(veh)
        lanes = []
        for i in range(len(network.lanes)):
            vs = buckets[i]
            st = LaneState([q.id for q in vs], [q.position for q in vs],
                           [q.velocity for q in vs], [q.acceleration for q in vs])
            st.sort()
            lanes.append(st)
        return cls(network, lanes)

    def copy(self) -> "Traffic":
        return Traffic(self.network, [ls.copy() for ls in self.lanes])

    def __len__(self):
        return sum(len(ls) for ls in self.lanes)

    def vehicles(self) -> list[Vehicle]:
        out = []
        for li, ls in enumerate(self.lanes):
            for k in range(len(ls)):
                out.append(Vehicle(int(ls.ids[k]), li, float(ls.x[k]), float(ls.v[k]), float(ls.a[k])))
        return out

    def locate(self) -> dict[int, tuple[int, int]]:
        """Map vehicle id to (lane, slot)."""
        where = {}
        for li, ls in enumerate(self.lanes):
            for k, vid in enumerate(ls.ids.tolist()):
                where[vid] = (li, k)
        return where

    def vehicle(self, vid: int) -> Vehicle:
        for li, ls in enumerate(self.lanes):
            hit = np.nonzero(ls.ids == vid)[0]
            if len(hit):
                k = hit[0]
                return Vehicle(int(vid), li, float(ls.x[k]), float(ls.v[k]), float(ls.a[k]))
        raise KeyError(vid)


def _entry_blocked(traffic: Traffic, lane_index: int, gap: float, reach: float,
                   size: float, lookahead: float = 0.0, v0: float = INITIAL_VELOCITY) -> bool:
    """True when the entry slot of a lane is occupied on its virtual lanes.

    A newcomer at position 0 is compared with the lane's last vehicle and,
    for every conflict on the lane up to ``reach``, with each crossing
    vehicle projected through that conflict.  The entry is blocked if any of
    them is within ``gap`` of the newcomer now or after ``lookahead``
    seconds at constant speeds (or passes it in between).
    """
    ls = traffic.lanes[lane_index]
    if len(ls) and (ls.x[0] < gap or ls.x[0] + (ls.v[0] - v0) * lookahead < gap):
        return True
    for cp in traffic.network.conflicts.by_lane[lane_index]:
        base_pos, other, other_pos = cp.on(lane_index)
        if base_pos > reach:
            break
        ox = traffic.lanes[other].x
        if not len(ox):
            continue
        delta = other_pos - ox
        live = delta >= -size
        if not live.any():
            continue
        # offset of each crosser relative to the newcomer, now and after
        # ``lookahead`` seconds at constant speeds
        r0 = base_pos - delta[live]
        r1 = r0 + (traffic.lanes[other].v[live] - v0) * lookahead
        crosses = (r0 < 0) != (r1 < 0)
        if np.any((np.abs(r0) < gap) | (np.abs(r1) < gap) | crosses):
            return True
    return False


def maybe_spawn(world: "World", lane_index: int) -> Vehicle | None:
    """Draw this step's arrival for a lane and place it if the entry is clear.

    An arrival that finds the entry blocked is kept pending, not dropped.
    """
    proc = world.spawners[lane_index]
    if proc.rng.random() < proc.arrival_probability(world.clock.step_duration):
        proc.pending += 1
    if proc.pending == 0:
        return None
    if _entry_blocked(world.traffic, lane_index, proc.min_spawn_gap, world.gate_reach,
                      world.size, world.gate_lookahead):
        return None
    proc.pending -= 1
    vid = world.next_id
    world.next_id += 1
    ls = world.traffic.lanes[lane_index]
    ls.ids = np.concatenate(([vid], ls.ids))
    ls.x = np.concatenate(([0.0], ls.x))
    ls.v = np.concatenate(([INITIAL_VELOCITY], ls.v))
    ls.a = np.concatenate(([0.0], ls.a))
    world.spawned += 1
    return Vehicle(vid, lane_index, 0.0, INITIAL_VELOCITY, 0.0)


def detect_collisions(world: "World") -> list[CollisionEvent]:
    """Pairs closer than one vehicle length on a lane or at a conflict point.

    Crossing pairs count only while both vehicles are within
    ``world.conflict_window`` of the shared conflict point.
    """
    size, step = world.size, world.clock.step_index
    events: dict[tuple[int, int], CollisionEvent] = {}

    def emit(a, b, lane, gap):
        key = (min(a, b), max(a, b))
        if key not in events:
            events[key] = CollisionEvent(step, key[0], key[1], lane, float(gap))

    for li, ls in enumerate(world.traffic.lanes):
        x = ls.x
        n = len(x)
        if n < 2:
            continue
        close = np.nonzero(np.diff(x) < size)[0]
        for k in close.tolist():
            j = k + 1
            while j < n and x[j] - x[k] < size:
                emit(int(ls.ids[k]), int(ls.ids[j]), li, x[j] - x[k])
                j += 1
    win = world.conflict_window
    lanes = world.traffic.lanes
    for cp in world.network.conflicts:
        la, lb = lanes[cp.lane_a], lanes[cp.lane_b]
        if not len(la) or not len(lb):
            continue
        da = cp.pos_on_a - la.x
        db = cp.pos_on_b - lb.x
        ia = np.nonzero(np.abs(da) < win)[0]
        if not len(ia):
            continue
        ib = np.nonzero(np.abs(db) < win)[0]
        for i in ia.tolist():
            for j in ib.tolist():
                gap = abs(da[i] - db[j])
                if gap < size:
                    emit(int(la.ids[i]), int(lb.ids[j]), cp.lane_a, gap)
    return [events[k] for k in sorted(events)]


@dataclass
class StepResult:
    events: list[CollisionEvent]
    retired: list[int]
    removed: dict[int, float]  # collided id -> last velocity
    spawned: list[int]


class World:
    """Single-writer simulation state advanced one step at a time."""

    def __init__(self, network: RoadNetwork, density: float = 0.0, seed: int = 0,
                 dt: float = DT, limits: Kinematics = Kinematics(),
                 min_spawn_gap: float = MIN_SPAWN_GAP, size: float = VEHICLE_SIZE,
                 horizon: float | None = None, conflict_window: float | None = None,
                 spawn: bool = True, gate_reach: float = math.inf,
                 gate_lookahead: float = 2.0):
        self.network = network
        self.clock = SimClock(0, dt)
        self.limits = limits
        self.size = size
        # crossing traffic counts on a virtual lane from this far before its
        # conflict point (covers the whole box of the next intersection)
        self.horizon = network.lane_length + network.lane_width if horizon is None else horizon
        # conflicts farther than this from the entry are ignored by spawn gating
        self.gate_reach = gate_reach
        self.gate_lookahead = gate_lookahead
        self.conflict_window = size if conflict_window is None else conflict_window
        self.traffic = Traffic(network)
        seeds = np.random.SeedSequence(seed).spawn(len(network.lanes))
        self.spawners = [SpawnProcess(density, np.random.default_rng(s), min_spawn_gap)
                         for s in seeds]
        self.spawn_enabled = spawn
        self.next_id = 0
        self.spawned = 0
        self.retired = 0
        self.collided = 0
        self.last = StepResult([], [], {}, [])

    @property
    def active(self) -> int:
        return len(self.traffic)

    def add_vehicle(self, lane: int, position: float, velocity: float = INITIAL_VELOCITY,
                    acceleration: float = 0.0) -> int:
        """Place a vehicle directly (scripted scenarios and tests)."""
        vid = self.next_id
        self.next_id += 1
        ls = self.traffic.lanes[lane]
        ls.ids = np.append(ls.ids, vid)
        ls.x = np.append(ls.x, float(position))
        ls.v = np.append(ls.v, float(velocity))
        ls.a = np.append(ls.a, float(acceleration))
        ls.sort()
        self.spawned += 1
        return vid

    def vehicles(self) -> list[Vehicle]:
        return self.traffic.vehicles()

    def advance(self, actions: Mapping[int, float] | None = None,
                lane_actions: Sequence[np.ndarray] | None = None) -> StepResult:
        """Integrate all vehicles, retire, spawn, resolve collisions, tick.

        ``actions`` maps vehicle id to commanded acceleration; vehicles without
        an entry keep their current acceleration.  ``lane_actions`` is the
        array form (one array per lane, aligned with the lane's slots).
        """
        lanes = self.traffic.lanes
        if lane_actions is not None:
            cmds = [np.asarray(c, dtype=float) for c in lane_actions]
            for ls, c in zip(lanes, cmds):
                if c.shape != ls.x.shape:
                    raise ValueError("lane action array does not match lane population")
                if not np.all(np.isfinite(c)):
                    raise ValueError("non-finite acceleration command")
        else:
            cmds = [ls.a.copy() for ls in lanes]
            if actions:
                where = self.traffic.locate()
                for vid, acc in actions.items():
                    if vid not in where:
                        raise KeyError(f"action for unknown vehicle {vid}")
                    if not math.isfinite(acc):
                        raise ValueError(f"non-finite acceleration for vehicle {vid}")
                    li, k = where[vid]
                    cmds[li][k] = acc
        lim = self.limits
        retired: list[int] = []
        for li, ls in enumerate(lanes):
            if not len(ls):
                continue
            ls.x, ls.v = integrate(ls.x, ls.v, ls.a, self.clock.step_duration, lim)
            ls.a = np.clip(cmds[li], lim.a_min, lim.a_max)
            out = ls.x > self.network.lanes[li].length
            if out.any():
                retired.extend(ls.ids[out].tolist())
                ls.keep(~out)
        self.retired += len(retired)
        spawned = []
        if self.spawn_enabled:
            for li in range(len(lanes)):
                veh = maybe_spawn(self, li)
                if veh is not None:
                    spawned.append(veh.id)
        events = detect_collisions(self)
        removed: dict[int, float] = {}
        if events:
            hit = {e.vehicle_a for e in events} | {e.vehicle_b for e in events}
            for ls in lanes:
                mask = np.isin(ls.ids, list(hit))
                if mask.any():
                    for vid, vel in zip(ls.ids[mask].tolist(), ls.v[mask].tolist()):
                        removed[vid] = vel
                    ls.keep(~mask)
            self.collided += len(removed)
        self.clock.step_index += 1
        self.last = StepResult(events, retired, removed, spawned)
        return self.last

    @property
    def pending(self) -> int:
        return sum(p.pending for p in self.spawners)
