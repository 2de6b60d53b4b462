"""Fixed-time two-phase signal control used as a comparison baseline.

Vehicles follow their lane leader with an intelligent-driver style law and
treat a red stop line as a standing obstacle.  A vehicle that can no longer
stop within the comfortable deceleration when the light turns proceeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..world import A_MAX, V_MAX, VEHICLE_SIZE, Kinematics, RoadNetwork, World
from .config import ScenarioConfig
from .episode import EpisodeRecord, heat_map, mean_velocity


@dataclass(frozen=True)
class SignalPlan:
    """Horizontal green, all-red, vertical green, all-red; repeated."""
    cycle: float = 30.0
    green_h: float = 13.0
    green_v: float = 13.0
    all_red: float = 2.0
    always: str | None = None  # "green" or "red" for the degenerate plans

    def __post_init__(self):
        if self.always is not None:
            if self.always not in ("green", "red"):
                raise ValueError("always must be 'green' or 'red'")
            return
        if min(self.cycle, self.green_h, self.green_v) <= 0 or self.all_red < 0:
            raise ValueError("phase durations must be positive")
        if not math.isclose(self.green_h + self.green_v + 2 * self.all_red, self.cycle):
            raise ValueError("phases must partition the cycle")

    @classmethod
    def fixed(cls, cycle: float = 30.0, split: float = 0.5, all_red: float = 2.0) -> "SignalPlan":
        green = cycle - 2 * all_red
        return cls(cycle, green * split, green * (1 - split), all_red)

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "SignalPlan":
        return cls.fixed(config.signal_cycle, config.signal_split, config.signal_all_red)

    @classmethod
    def all_green(cls) -> "SignalPlan":
        return cls(always="green")

    @classmethod
    def all_red_plan(cls) -> "SignalPlan":
        return cls(always="red")

    def green(self, axis: str, t: float) -> bool:
        if self.always is not None:
            return self.always == "green"
        u = t % self.cycle
        if axis == "h":
            return u < self.green_h
        start = self.green_h + self.all_red
        return start <= u < start + self.green_v


@dataclass(frozen=True)
class FollowParams:
    a: float = A_MAX  # maximum acceleration
    b: float = 3.0  # comfortable deceleration
    s0: float = 2.0  # standstill gap
    headway: float = 1.0
    v0: float = V_MAX
    stop_offset: float = 5.0  # stop line this far before the first conflict


def idm(v, gap, dv, p: FollowParams):
    """Intelligent-driver acceleration for bumper gap ``gap`` and approach rate ``dv``."""
    s_star = p.s0 + np.maximum(0.0, v * p.headway + v * dv / (2 * math.sqrt(p.a * p.b)))
    free = 1 - (v / p.v0) ** 4
    with np.errstate(divide="ignore"):
        inter = np.where(np.isfinite(gap), (s_star / np.maximum(gap, 1e-3)) ** 2, 0.0)
    return np.clip(p.a * (free - inter), -p.b, p.a)


def stop_lines(network: RoadNetwork, p: FollowParams) -> list[np.ndarray]:
    out = []
    for ln in network.lanes:
        firsts = []
        for k in ln.intersections:
            cps = [c for c in network.conflicts.by_intersection[k] if c.involves(ln.index)]
            firsts.append(min(c.on(ln.index)[0] for c in cps))
        out.append(np.array(firsts) - p.stop_offset)
    return out


def signal_actions(world: World, plan: SignalPlan, lines: list[np.ndarray],
                   committed: list[set], p: FollowParams):
    """Accelerations for every vehicle; returns (per-lane arrays, amber count)."""
    t = world.clock.time
    net = world.network
    out = []
    amber = 0
    for li, ls in enumerate(world.traffic.lanes):
        n = len(ls)
        if not n:
            out.append(np.zeros(0))
            continue
        x, v = ls.x, ls.v
        lead_gap = np.full(n, np.inf)
        lead_dv = np.zeros(n)
        lead_gap[:-1] = x[1:] - x[:-1] - VEHICLE_SIZE
        lead_dv[:-1] = v[:-1] - v[1:]
        acc = idm(v, lead_gap, lead_dv, p)
        if not plan.green(net.lanes[li].axis, t):
            sl = lines[li]
            k = np.searchsorted(sl, x, side="left")  # next stop line at or ahead
            has = k < len(sl)
            dist = np.where(has, sl[np.minimum(k, len(sl) - 1)] - x, np.inf)
            for i in np.nonzero(has)[0].tolist():
                vid = int(ls.ids[i])
                key = (vid, int(k[i]))
                if key in committed[li]:
                    continue
                d = dist[i]
                # a vehicle that cannot stop comfortably keeps going
                if d <= 0 or v[i] * v[i] / (2 * max(d, 1e-9)) > p.b:
                    committed[li].add(key)
                    amber += 1
                    continue
                a_stop = idm(v[i:i + 1], np.array([d]), v[i:i + 1], p)[0]
                acc[i] = min(acc[i], a_stop)
        out.append(acc)
    return out, amber


def run_signalized_baseline(config: ScenarioConfig, plan: SignalPlan | None = None,
                            heat: bool = True, follow: FollowParams = FollowParams()) -> EpisodeRecord:
    plan = plan or SignalPlan.from_config(config)
    net = RoadNetwork(config.grid_rows, config.grid_cols)
    # signalised vehicles must be able to stop, so the lower speed bound is 0
    world = World(net, config.density, config.seed, limits=Kinematics(v_min=0.0),
                  min_spawn_gap=config.min_spawn_gap, gate_lookahead=config.gate_lookahead)
    lines = stop_lines(net, follow)
    committed = [set() for _ in net.lanes]
    steps = config.episode_steps
    vel = np.full(steps, np.nan)
    active = np.zeros(steps, dtype=np.int64)
    events = []
    amber = 0
    peak, peak_n = None, -1
    for t in range(steps):
        acts, n_amber = signal_actions(world, plan, lines, committed, follow)
        amber += n_amber
        res = world.advance(lane_actions=acts)
        events.extend(res.events)
        vel[t] = mean_velocity(world.traffic)
        active[t] = world.active
        if heat and world.active > peak_n:
            peak_n = world.active
            peak = heat_map(world.traffic, t, config.cell)
    return EpisodeRecord(
        config=config, velocity=vel, active=active, collisions=events,
        spawned=world.spawned, retired=world.retired, collided=world.collided,
        pending=world.pending,
        heat_final=heat_map(world.traffic, steps - 1, config.cell) if heat else None,
        heat_peak=peak, amber=amber)
