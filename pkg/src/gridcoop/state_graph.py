"""Decision-vehicle selection and the square state graph fed to the networks.

Column ``j`` of a graph belongs to decision vehicle ``j``: row 0 carries its
own kinetics and rows ``1..width-1`` its nearest virtual-lane neighbours,
nearest first.  Channels are (position offset, velocity, acceleration).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .virtual_lane import OWN, VirtualLane, neighbor_table
from .world import A_MAX, V_MAX

EDGE_WIDTH = 15
CLOUD_WIDTH = 60
CHANNELS = 3


@dataclass
class StateGraph:
    width: int
    values: np.ndarray  # (width, width, 3), rows x columns x channels
    column_vehicles: list[int] = field(default_factory=list)

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _select(ids, primary, conflict_distance, width: int) -> list[int]:
    ids = np.asarray(ids, dtype=np.int64)
    if not len(ids):
        return []
    primary = np.asarray(primary, dtype=float)
    cd = np.asarray(conflict_distance, dtype=float)
    order = np.lexsort((ids, cd, primary))
    return ids[order[:width]].tolist()


def select_decision_vehicles_edge(ids, sv, conflict_distance, width: int = EDGE_WIDTH) -> list[int]:
    """Lowest safety value first; ties by distance to the nearest conflict, then id."""
    return _select(ids, sv, conflict_distance, width)


def select_decision_vehicles_cloud(ids, di, conflict_distance, width: int = CLOUD_WIDTH) -> list[int]:
    """Highest density indicator first; same tie rule as the edge."""
    return _select(ids, -np.asarray(di, dtype=float), conflict_distance, width)


def home_lanes(decision_ids: Sequence[int], vlanes: Sequence[VirtualLane]) -> list[tuple[int, int]]:
    """(virtual lane, entry index) per decision vehicle, preferring its own lane."""
    own, anywhere = {}, {}
    for k, vl in enumerate(vlanes):
        for i, (vid, org) in enumerate(zip(vl.ids.tolist(), vl.origins.tolist())):
            if org == OWN:
                own.setdefault(vid, (k, i))
            anywhere.setdefault(vid, (k, i))
    out = []
    for vid in decision_ids:
        hit = own.get(vid, anywhere.get(vid))
        if hit is None:
            raise KeyError(f"decision vehicle {vid} is on no virtual lane")
        out.append(hit)
    return out


def build_state_graph(decision_ids: Sequence[int], vlanes: Sequence[VirtualLane], width: int,
                      v_max: float = V_MAX, a_max: float = A_MAX) -> StateGraph:
    decision_ids = [int(v) for v in decision_ids][:width]
    values = np.zeros((width, width, CHANNELS))
    if not decision_ids:
        return StateGraph(width, values, [])
    homes = home_lanes(decision_ids, vlanes)
    by_lane: dict[int, list[tuple[int, int]]] = {}
    for col, (k, i) in enumerate(homes):
        by_lane.setdefault(k, []).append((col, i))
    for k, items in by_lane.items():
        vl = vlanes[k]
        cols = np.array([c for c, _ in items])
        rows = np.array([i for _, i in items])
        values[0, cols, 1] = vl.velocities[rows] / v_max
        values[0, cols, 2] = vl.accelerations[rows] / a_max
        if width < 2:
            continue
        idx, gap = neighbor_table(vl, rows, width - 1)
        ok = idx >= 0
        safe = np.where(ok, idx, 0)
        pos = np.clip(gap / vl.length, -1.0, 1.0)
        vel = vl.velocities[safe] / v_max
        acc = vl.accelerations[safe] / a_max
        for ch, arr in enumerate((pos, vel, acc)):
            # arr is (decision, reference); the graph stores (reference row, column)
            values[1:, cols, ch] = np.where(ok, arr, 0.0).T
    np.clip(values, -1.0, 1.0, out=values)
    return StateGraph(width, values, decision_ids)
