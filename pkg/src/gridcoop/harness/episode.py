"""One episode of simulation under a control mode, with optional learning."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..coordinators import (CloudNode, Decision, decide_cloud, decide_edges, directive_arrays,
                            make_edges, merge_cloud, record_transition)
from ..end_controller import DEFAULT_FUSION, resolve_all
from ..nets import Agent, DivergenceError, ReplayBuffer, actor_update, critic_update, target_sync
from ..state_graph import StateGraph
from ..world import V_MAX, CollisionEvent, RoadNetwork, StepResult, Traffic, World
from .config import ScenarioConfig


@dataclass
class HeatMap:
    step: int
    occupancy: np.ndarray  # vehicles per cell
    velocity: np.ndarray  # mean velocity per cell, 0 where empty


@dataclass
class EpisodeRecord:
    config: ScenarioConfig
    velocity: np.ndarray  # per-step mean velocity, NaN for empty steps
    active: np.ndarray  # per-step population after the step
    collisions: list[CollisionEvent]
    spawned: int
    retired: int
    collided: int
    pending: int
    heat_final: HeatMap | None = None
    heat_peak: HeatMap | None = None
    losses: list[tuple[int, float, float]] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    amber: int = 0  # signal baseline: vehicles that could not stop in time

    def __len__(self):
        return len(self.velocity)

    @property
    def mean_velocity(self) -> float:
        v = self.velocity[~np.isnan(self.velocity)]
        return float(v.mean()) if len(v) else math.nan

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.config.text().encode())
        for arr in (self.velocity, self.active):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr([(e.step_index, e.vehicle_a, e.vehicle_b, e.virtual_lane, e.gap)
                       for e in self.collisions]).encode())
        h.update(repr((self.spawned, self.retired, self.collided, self.pending, self.amber)).encode())
        for hm in (self.heat_final, self.heat_peak):
            if hm is not None:
                h.update(str(hm.step).encode())
                h.update(hm.occupancy.tobytes())
                h.update(hm.velocity.tobytes())
        h.update(repr(self.losses).encode())
        h.update(repr(self.rewards).encode())
        return h.hexdigest()


def heat_map(traffic: Traffic, step: int, cell: float) -> HeatMap:
    """Vehicle counts and mean velocities on a square grid over the network."""
    net = traffic.network
    nx = int(math.ceil(net.width / cell))
    ny = int(math.ceil(net.height / cell))
    occ = np.zeros((ny, nx))
    vsum = np.zeros((ny, nx))
    for ln, ls in zip(net.lanes, traffic.lanes):
        if not len(ls):
            continue
        x, y = net.to_xy(ln, ls.x)
        cx = np.clip((x // cell).astype(int), 0, nx - 1)
        cy = np.clip((y // cell).astype(int), 0, ny - 1)
        np.add.at(occ, (cy, cx), 1.0)
        np.add.at(vsum, (cy, cx), ls.v)
    vel = np.divide(vsum, occ, out=np.zeros_like(vsum), where=occ > 0)
    return HeatMap(step, occ, vel)


def mean_velocity(traffic: Traffic) -> float:
    n = len(traffic)
    if not n:
        return math.nan
    return float(sum(ls.v.sum() for ls in traffic.lanes) / n)


def reward(decision_vehicles, traffic_after: Traffic, result: StepResult,
           v_max: float = V_MAX) -> float:
    """Mean post-step velocity of the decision vehicles over ``v_max``.

    Vehicles that left the network count at ``v_max`` and vehicles removed
    in a collision count as 0.
    """
    ids = list(decision_vehicles)
    if not ids:
        return 0.0
    retired = set(result.retired)
    where = traffic_after.locate()
    total = 0.0
    for vid in ids:
        if vid in retired:
            total += v_max
        elif vid in result.removed:
            total += 0.0
        elif vid in where:
            li, k = where[vid]
            total += float(traffic_after.lanes[li].v[k])
        else:
            raise KeyError(f"decision vehicle {vid} vanished")
    return total / (len(ids) * v_max)


def _dtype(config: ScenarioConfig):
    return np.float32 if config.net_dtype == "float32" else np.float64


def make_buffer(config: ScenarioConfig, tier: str, agent: Agent) -> ReplayBuffer:
    cap = config.buffer_edge if tier == "edge" else config.buffer_cloud
    return ReplayBuffer(cap, agent.actor.width)


@dataclass
class Learner:
    """A tier being trained: its agent, buffer, noise level and rng."""
    agent: Agent
    buffer: ReplayBuffer
    sigma: float
    rng: np.random.Generator
    pending: dict = field(default_factory=dict)  # node -> (graph, actions, reward)

    def observe(self, decisions: list[Decision]) -> None:
        """Close last step's transitions with this step's graphs."""
        now = {d.node: d.graph for d in decisions}
        for key, (g, a, r) in list(self.pending.items()):
            nxt = now.get(key)
            if nxt is None:
                nxt = StateGraph(g.width, np.zeros_like(g.values), [])
            record_transition(self, g, a, r, nxt)
        self.pending.clear()

    def update(self) -> tuple[float, float] | None:
        hp = self.agent.hp
        if len(self.buffer) < hp.batch:
            return None
        batch = self.buffer.sample(hp.batch, self.rng)
        lc = critic_update(self.agent, batch)
        la = actor_update(self.agent, batch)
        target_sync(self.agent)
        return lc, la


def run_episode(config: ScenarioConfig, edge_agent: Agent | None = None,
                cloud_agent: Agent | None = None, train: str | None = None,
                learner: Learner | None = None, heat: bool = True) -> EpisodeRecord:
    """Simulate ``config.episode_steps`` steps under ``config.mode``.

    With ``train`` set to ``"edge"`` or ``"cloud"`` the matching tier acts
    with exploration noise, stores one transition per state graph and step,
    and updates its networks every ``config.update_every`` steps once its
    buffer holds a minibatch.
    """
    mode = config.mode
    if mode == "signal":
        from .baseline import run_signalized_baseline, SignalPlan
        return run_signalized_baseline(config, SignalPlan.from_config(config), heat=heat)
    if mode in ("EE", "EEC") and edge_agent is None:
        raise ValueError(f"mode {mode} needs an edge policy")
    if mode == "EEC" and cloud_agent is None:
        raise ValueError("mode EEC needs a cloud policy")
    if train not in (None, "edge", "cloud"):
        raise ValueError(f"unknown training tier {train!r}")
    if train is not None and learner is None:
        raise ValueError("training needs a learner")
    if train == "edge" and mode not in ("EE", "EEC") or train == "cloud" and mode != "EEC":
        raise ValueError(f"cannot train {train} in mode {mode}")

    net = RoadNetwork(config.grid_rows, config.grid_cols)
    world = World(net, config.density, config.seed, min_spawn_gap=config.min_spawn_gap,
                  gate_lookahead=config.gate_lookahead)
    horizon = world.horizon
    edges = make_edges(net, agent=edge_agent) if mode in ("EE", "EEC") else []
    cloud = CloudNode(cloud_agent) if mode == "EEC" else None

    steps = config.episode_steps
    vel = np.full(steps, np.nan)
    active = np.zeros(steps, dtype=np.int64)
    events: list[CollisionEvent] = []
    losses: list[tuple[int, float, float]] = []
    rewards: list[float] = []
    peak = None
    peak_n = -1

    for t in range(steps):
        traffic = world.traffic
        edge_arr = cloud_arr = None
        edge_dec: list[Decision] = []
        cloud_dec: list[Decision] = []
        if edges:
            sig = learner.sigma if train == "edge" else 0.0
            rng = learner.rng if train == "edge" else None
            edge_dec = decide_edges(edges, traffic, horizon, sigma=sig, rng=rng)
            edge_arr = directive_arrays(traffic, [d for dec in edge_dec for d in dec.directives])
        if cloud is not None:
            sig = learner.sigma if train == "cloud" else 0.0
            rng = learner.rng if train == "cloud" else None
            cloud_dec = decide_cloud(cloud, traffic, sigma=sig, rng=rng)
            cloud_arr = directive_arrays(traffic, merge_cloud(cloud_dec))
        trained = edge_dec if train == "edge" else cloud_dec if train == "cloud" else None
        if trained is not None:
            learner.observe(trained)
        acts = resolve_all(traffic, edge_arr, cloud_arr, horizon, DEFAULT_FUSION)
        res = world.advance(lane_actions=acts)
        events.extend(res.events)
        if trained is not None:
            for d in trained:
                if d.graph.column_vehicles:
                    r = reward(d.graph.column_vehicles, world.traffic, res)
                    rewards.append(r)
                    learner.pending[d.node] = (d.graph, d.actions, r)
            if t % config.update_every == 0:
                try:
                    out = learner.update()
                except DivergenceError as exc:
                    raise DivergenceError(f"step {t}: {exc}") from None
                if out is not None:
                    losses.append((t, out[0], out[1]))
        vel[t] = mean_velocity(world.traffic)
        active[t] = world.active
        if heat and world.active > peak_n:
            peak_n = world.active
            peak = heat_map(world.traffic, t, config.cell)
    if learner is not None:
        learner.pending.clear()
    return EpisodeRecord(
        config=config, velocity=vel, active=active, collisions=events,
        spawned=world.spawned, retired=world.retired, collided=world.collided,
        pending=world.pending,
        heat_final=heat_map(world.traffic, steps - 1, config.cell) if heat else None,
        heat_peak=peak, losses=losses, rewards=rewards)
