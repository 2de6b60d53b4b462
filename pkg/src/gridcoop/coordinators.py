"""Edge and cloud decision pipelines.

An edge node watches one intersection and instructs the least safe vehicles
in its zone; the cloud watches the whole network and instructs the vehicles
whose spacing deviates most from their lane's mean.  Both turn a world
snapshot into state graphs, run their actor and emit acceleration
directives that the end controller folds into its own rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assessment import DEFAULT_SV, SVParams, density_indicators, lane_safety
from .nets import ACTION_SCALE, Agent, ReplayBuffer
from .state_graph import (CLOUD_WIDTH, EDGE_WIDTH, StateGraph, build_state_graph,
                          select_decision_vehicles_cloud, select_decision_vehicles_edge)
from .virtual_lane import OWN, VirtualLane, build_virtual_lane
from .world import VEHICLE_SIZE, RoadNetwork, Traffic

END, EDGE_SRC, CLOUD_SRC = "end", "edge", "cloud"


@dataclass(frozen=True)
class ActionDirective:
    vehicle: int
    source: str
    accel: float

    def __post_init__(self):
        if not -ACTION_SCALE <= self.accel <= ACTION_SCALE:
            raise ValueError(f"directive acceleration {self.accel} out of range")


@dataclass
class EdgeNode:
    intersection: int
    radius: float
    agent: Agent | None = None
    buffer: ReplayBuffer | None = None


@dataclass
class CloudNode:
    agent: Agent | None = None
    buffer: ReplayBuffer | None = None


@dataclass
class Decision:
    """One state graph, the actions taken on it and the directives sent."""
    node: object  # intersection id for edges, base lane for the cloud
    graph: StateGraph
    actions: np.ndarray
    directives: list[ActionDirective] = field(default_factory=list)
    scores: dict[int, float] = field(default_factory=dict)


def make_edges(network: RoadNetwork, radius: float | None = None, agent: Agent | None = None,
               buffer: ReplayBuffer | None = None) -> list[EdgeNode]:
    r = network.lane_length if radius is None else radius
    return [EdgeNode(k, r, agent, buffer) for k in range(len(network.intersection_centers))]


def conflict_distance(network: RoadNetwork, lane: int, x: np.ndarray) -> np.ndarray:
    """Distance from each position to the nearest conflict point on ``lane``."""
    cps = network.conflicts.by_lane[lane]
    if not cps:
        return np.full(len(x), np.inf)
    c = np.array([cp.on(lane)[0] for cp in cps])
    return np.abs(c[None, :] - np.asarray(x)[:, None]).min(axis=1)


def zone_of(network: RoadNetwork, lane: int, x: np.ndarray, radius: float,
            clear: float | None = None) -> np.ndarray:
    """Intersection id whose control zone holds each position, or -1.

    A vehicle belongs to an intersection from ``radius`` metres before its
    centre until it is ``clear`` metres past it.  Where zones overlap the
    nearer centre wins; equal distances go downstream.
    """
    ln = network.lanes[lane]
    clear = network.lane_width / 2 + VEHICLE_SIZE if clear is None else clear
    x = np.asarray(x, dtype=float)
    out = np.full(len(x), -1, dtype=np.int64)
    best = np.full(len(x), np.inf)
    # walk downstream to upstream so that ties keep the downstream centre
    for k, c in reversed(list(zip(ln.intersections, ln.centers))):
        to_go = c - x
        inside = (to_go > -clear) & (to_go <= radius)
        better = inside & (np.abs(to_go) < best)
        out[better] = k
        best[better] = np.abs(to_go[better])
    return out


def assign_vehicles(traffic: Traffic, edges: Sequence[EdgeNode]) -> dict[int, list[int]]:
    """Map each edge's intersection to the ids in its control zone."""
    net = traffic.network
    out = {e.intersection: [] for e in edges}
    radius = {e.intersection: e.radius for e in edges}
    if not radius:
        return out
    radii = set(radius.values())
    for li, ls in enumerate(traffic.lanes):
        if not len(ls):
            continue
        for r in radii:
            z = zone_of(net, li, ls.x, r)
            for vid, k in zip(ls.ids.tolist(), z.tolist()):
                if k in out and radius[k] == r:
                    out[k].append(vid)
    for k in out:
        out[k].sort()
    return out


def edge_virtual_lanes(network: RoadNetwork, intersection: int, traffic: Traffic,
                       horizon: float, size: float = VEHICLE_SIZE) -> list[VirtualLane]:
    """The four virtual lanes of an intersection, one per approach."""
    cps = network.conflicts.by_intersection[intersection]
    lanes = sorted({cp.lane_a for cp in cps} | {cp.lane_b for cp in cps})
    return [build_virtual_lane(network, li, traffic, conflicts=[c for c in cps if c.involves(li)],
                               horizon=horizon, tail=size) for li in lanes]


def edge_graph(edge: EdgeNode, traffic: Traffic, assigned: Sequence[int], horizon: float,
               sv_params: SVParams = DEFAULT_SV, width: int = EDGE_WIDTH):
    """State graph of one edge node plus the safety values behind its selection."""
    net = traffic.network
    vlanes = edge_virtual_lanes(net, edge.intersection, traffic, horizon)
    members = set(assigned)
    ids, svs, cds = [], [], []
    for vl in vlanes:
        rows = np.nonzero(vl.origins == OWN)[0]
        if not len(rows):
            continue
        keep = np.array([v in members for v in vl.ids[rows].tolist()], dtype=bool)
        rows = rows[keep]
        if not len(rows):
            continue
        sv, _, _ = lane_safety(vl, rows, sv_params)
        ids.append(vl.ids[rows])
        svs.append(sv)
        cds.append(conflict_distance(net, vl.base_lane, vl.positions[rows]))
    if not ids:
        return build_state_graph([], vlanes, width), {}
    ids, svs, cds = np.concatenate(ids), np.concatenate(svs), np.concatenate(cds)
    chosen = select_decision_vehicles_edge(ids, svs, cds, width)
    score = dict(zip(ids.tolist(), svs.tolist()))
    return build_state_graph(chosen, vlanes, width), {v: score[v] for v in chosen}


def _act(agent: Agent, graphs: Sequence[StateGraph], sigma: float = 0.0,
         rng: np.random.Generator | None = None) -> np.ndarray:
    """Actor outputs for a batch of graphs, with optional exploration noise."""
    if not graphs:
        return np.zeros((0, agent.actor.width))
    a = agent.actor.forward(np.stack([g.values for g in graphs])).astype(float)
    if sigma > 0:
        if rng is None:
            raise ValueError("exploration noise needs an rng")
        a = a + rng.normal(0.0, sigma, a.shape)
    return np.clip(a, -ACTION_SCALE, ACTION_SCALE)


def _directives(graph: StateGraph, actions: np.ndarray, source: str) -> list[ActionDirective]:
    return [ActionDirective(int(v), source, float(actions[j]))
            for j, v in enumerate(graph.column_vehicles)]


def decide_edges(edges: Sequence[EdgeNode], traffic: Traffic, horizon: float,
                 sv_params: SVParams = DEFAULT_SV, sigma: float = 0.0,
                 rng: np.random.Generator | None = None,
                 assignment: dict[int, list[int]] | None = None) -> list[Decision]:
    """Run every edge node on the snapshot; nodes sharing an agent share one forward pass."""
    if assignment is None:
        assignment = assign_vehicles(traffic, edges)
    built = []
    for e in edges:
        g, scores = edge_graph(e, traffic, assignment.get(e.intersection, []), horizon, sv_params)
        built.append((e, g, scores))
    out: list[Decision | None] = [None] * len(built)
    groups: dict[int, list[int]] = {}
    for i, (e, _, _) in enumerate(built):
        if e.agent is None:
            raise ValueError(f"edge {e.intersection} has no policy")
        groups.setdefault(id(e.agent), []).append(i)
    for idxs in groups.values():
        agent = built[idxs[0]][0].agent
        acts = _act(agent, [built[i][1] for i in idxs], sigma, rng)
        for i, a in zip(idxs, acts):
            e, g, scores = built[i]
            out[i] = Decision(e.intersection, g, a, _directives(g, a, EDGE_SRC), scores)
    return out


def edge_decide(edge: EdgeNode, traffic: Traffic, horizon: float,
                sv_params: SVParams = DEFAULT_SV) -> list[ActionDirective]:
    """Directives of a single edge node (deterministic, no exploration)."""
    return decide_edges([edge], traffic, horizon, sv_params)[0].directives


def cloud_graphs(traffic: Traffic, n: int = 5, width: int = CLOUD_WIDTH):
    """One state graph per non-empty network-spanning virtual lane."""
    net = traffic.network
    out = []
    for li in range(len(net.lanes)):
        if not len(traffic.lanes[li]):
            continue
        vl = build_virtual_lane(net, li, traffic)
        di = density_indicators(vl.positions, n)
        rows = np.nonzero(vl.origins == OWN)[0]
        ids = vl.ids[rows]
        chosen = select_decision_vehicles_cloud(
            ids, di[rows], conflict_distance(net, li, vl.positions[rows]), width)
        score = dict(zip(ids.tolist(), di[rows].tolist()))
        out.append((li, build_state_graph(chosen, [vl], width), {v: score[v] for v in chosen}))
    return out


def merge_cloud(decisions: Sequence[Decision]) -> list[ActionDirective]:
    """A vehicle chosen on several base lanes follows the lane with its largest
    density indicator, then the lower lane id."""
    best: dict[int, tuple[float, int, ActionDirective]] = {}
    for d in decisions:
        for dirv in d.directives:
            key = (-d.scores.get(dirv.vehicle, 0.0), d.node)
            cur = best.get(dirv.vehicle)
            if cur is None or key < cur[:2]:
                best[dirv.vehicle] = (key[0], key[1], dirv)
    return [best[v][2] for v in sorted(best)]


def decide_cloud(cloud: CloudNode, traffic: Traffic, n: int = 5, sigma: float = 0.0,
                 rng: np.random.Generator | None = None) -> list[Decision]:
    if cloud.agent is None:
        raise ValueError("cloud has no policy")
    built = cloud_graphs(traffic, n, cloud.agent.actor.width)
    acts = _act(cloud.agent, [g for _, g, _ in built], sigma, rng)
    return [Decision(li, g, a, _directives(g, a, CLOUD_SRC), s)
            for (li, g, s), a in zip(built, acts)]


def cloud_decide(cloud: CloudNode, traffic: Traffic, n: int = 5) -> list[ActionDirective]:
    return merge_cloud(decide_cloud(cloud, traffic, n))


def record_transition(node, sg: StateGraph, actions, reward: float, next_sg: StateGraph) -> None:
    if node.buffer is None:
        raise ValueError("node has no replay buffer")
    node.buffer.store(sg.values, actions, reward, next_sg.values)


def directive_arrays(traffic: Traffic, directives: Sequence[ActionDirective]) -> list[np.ndarray]:
    """Per-lane arrays aligned with lane slots, NaN where no directive exists."""
    where = traffic.locate()
    out = [np.full(len(ls), np.nan) for ls in traffic.lanes]
    for d in directives:
        if d.vehicle not in where:
            raise KeyError(f"directive for unknown vehicle {d.vehicle}")
        li, k = where[d.vehicle]
        out[li][k] = d.accel
    return out
