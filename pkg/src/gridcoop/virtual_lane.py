"""Conflict-point geometry and projection of crossing traffic onto base lanes.

A crossing vehicle keeps its signed distance to the conflict point when it
is projected, so "12 m before the conflict" on its own lane becomes "12 m
before the conflict" on the base lane.  This turns two-dimensional crossing
conflicts into one-dimensional spacing along the base lane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .world import VEHICLE_SIZE

OWN = -1  # origin tag for vehicles that physically drive on the base lane


@dataclass(frozen=True)
class ConflictPoint:
    id: int
    lane_a: int  # horizontal lane
    lane_b: int  # vertical lane
    pos_on_a: float
    pos_on_b: float
    intersection: int

    def involves(self, lane: int) -> bool:
        return lane == self.lane_a or lane == self.lane_b

    def on(self, lane: int) -> tuple[float, int, float]:
        """(position on ``lane``, other lane, position on the other lane)."""
        if lane == self.lane_a:
            return self.pos_on_a, self.lane_b, self.pos_on_b
        if lane == self.lane_b:
            return self.pos_on_b, self.lane_a, self.pos_on_a
        raise ValueError(f"conflict {self.id} does not involve lane {lane}")


class ConflictSet(list):
    """All conflict points of a network with per-lane indexes."""

    def __init__(self, points: Iterable[ConflictPoint], n_lanes: int):
        super().__init__(points)
        self.by_lane: dict[int, list[ConflictPoint]] = {i: [] for i in range(n_lanes)}
        for cp in self:
            self.by_lane[cp.lane_a].append(cp)
            self.by_lane[cp.lane_b].append(cp)
        for lane, cps in self.by_lane.items():
            cps.sort(key=lambda c: (c.on(lane)[0], c.id))
        self.by_intersection: dict[int, list[ConflictPoint]] = {}
        for cp in self:
            self.by_intersection.setdefault(cp.intersection, []).append(cp)

    def between(self, base: int, other: int) -> list[ConflictPoint]:
        return [c for c in self.by_lane[base] if c.involves(other)]


def conflict_points(network) -> ConflictSet:
    """Every crossing of a horizontal lane with a vertical lane (4 per intersection)."""
    if network.grid_rows < 1 or network.grid_cols < 1:
        raise ValueError("network has no intersections")
    h = [ln for ln in network.lanes if ln.axis == "h"]
    v = [ln for ln in network.lanes if ln.axis == "v"]
    pts = []
    for a in h:
        y = (a.road + 1) * network.lane_length + network.offset(a)
        for b in v:
            x = (b.road + 1) * network.lane_length + network.offset(b)
            pts.append(ConflictPoint(
                id=len(pts), lane_a=a.index, lane_b=b.index,
                pos_on_a=network.lane_coordinate(a, x, y),
                pos_on_b=network.lane_coordinate(b, x, y),
                intersection=a.road * network.grid_cols + b.road,
            ))
    return ConflictSet(pts, len(network.lanes))


def project(base_lane: int, vehicle, conflict: ConflictPoint) -> float:
    """Position on ``base_lane`` of a crossing vehicle, centred on ``conflict``."""
    if not conflict.involves(base_lane):
        raise ValueError(f"conflict {conflict.id} does not involve base lane {base_lane}")
    if vehicle.lane == base_lane or not conflict.involves(vehicle.lane):
        raise ValueError(f"vehicle {vehicle.id} is not on the crossing lane of conflict {conflict.id}")
    base_pos, _, own_pos = conflict.on(base_lane)
    return base_pos - (own_pos - vehicle.position)


@dataclass
class VirtualLane:
    """Base-lane traffic plus projected crossing traffic, sorted by position."""
    base_lane: int
    length: float
    ids: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    origins: np.ndarray  # OWN or the id of the projection centre

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self) -> list[tuple[int, float, int]]:
        return list(zip(self.ids.tolist(), self.positions.tolist(), self.origins.tolist()))

    @property
    def own(self) -> np.ndarray:
        return self.origins == OWN

    def index_of(self, vehicle_id: int) -> int:
        hit = np.nonzero(self.ids == vehicle_id)[0]
        if not len(hit):
            raise KeyError(f"vehicle {vehicle_id} is not on virtual lane {self.base_lane}")
        return int(hit[0])


def _assemble(base_lane, length, parts) -> VirtualLane:
    if parts:
        ids, pos, vel, acc, org = (np.concatenate(c) for c in zip(*parts))
    else:
        ids = np.zeros(0, dtype=np.int64)
        pos = vel = acc = np.zeros(0)
        org = np.zeros(0, dtype=np.int64)
    order = np.lexsort((ids, pos))
    return VirtualLane(base_lane, length, ids[order], pos[order], vel[order],
                       acc[order], org[order].astype(np.int64))


def build_virtual_lane(network, base_lane: int, traffic,
                       conflicts: Sequence[ConflictPoint] | None = None,
                       horizon: float = math.inf, tail: float = VEHICLE_SIZE,
                       own_span: tuple[float, float] | None = None) -> VirtualLane:
    """Project crossing traffic onto ``base_lane``.

    Each crossing vehicle is projected through the nearest conflict with the
    base lane that it has not yet cleared; it is dropped once it is more than
    ``tail`` metres past its last one, or while it is farther than
    ``horizon`` before it.  ``conflicts`` restricts the usable projection
    centres and ``own_span`` the base-lane window.
    """
    lanes = traffic.lanes
    own = lanes[base_lane]
    n = len(own)
    parts = []
    if n:
        keep = slice(None)
        if own_span is not None:
            keep = (own.x >= own_span[0]) & (own.x <= own_span[1])
        parts.append((own.ids[keep], own.x[keep], own.v[keep], own.a[keep],
                      np.full(len(own.ids[keep]), OWN, dtype=np.int64)))
    usable = network.conflicts.by_lane[base_lane] if conflicts is None else [
        c for c in conflicts if c.involves(base_lane)]
    by_other: dict[int, list[ConflictPoint]] = {}
    for cp in usable:
        by_other.setdefault(cp.on(base_lane)[1], []).append(cp)
    for other, cps in sorted(by_other.items()):
        ls = lanes[other]
        if not len(ls):
            continue
        cps = sorted(cps, key=lambda c: c.on(other)[0])
        on_other = np.array([c.on(other)[0] for c in cps])
        on_base = np.array([c.on(base_lane)[0] for c in cps])
        cid = np.array([c.id for c in cps], dtype=np.int64)
        slot = np.searchsorted(on_other, ls.x - tail, side="left")
        ok = slot < len(cps)
        slot_ok = np.minimum(slot, len(cps) - 1)
        delta = on_other[slot_ok] - ls.x
        ok &= delta <= horizon
        if not ok.any():
            continue
        parts.append((ls.ids[ok], on_base[slot_ok[ok]] - delta[ok], ls.v[ok], ls.a[ok], cid[slot_ok[ok]]))
    return _assemble(base_lane, network.lanes[base_lane].length, parts)


def _rank_key(gaps: np.ndarray, ids: np.ndarray):
    # nearest first; equal distances prefer the downstream vehicle, then lower id
    return np.lexsort((ids, -gaps, np.abs(gaps)))


def nearest_neighbors(vlane: VirtualLane, vehicle_id: int, k: int) -> list[tuple[int, float]]:
    """The ``k`` entries closest to ``vehicle_id`` as ``(id, signed gap)``."""
    i = vlane.index_of(vehicle_id)
    mask = np.ones(len(vlane), dtype=bool)
    mask[i] = False
    gaps = vlane.positions[mask] - vlane.positions[i]
    ids = vlane.ids[mask]
    order = _rank_key(gaps, ids)[:max(k, 0)]
    return [(int(ids[j]), float(gaps[j])) for j in order]


def neighbor_table(vlane: VirtualLane, rows: np.ndarray, k: int):
    """Vectorised :func:`nearest_neighbors` for several entry indices.

    Returns ``(index, gap)`` arrays of shape ``(len(rows), k)``; missing
    neighbours carry index -1 and gap 0.  Only the ``k`` entries on either
    side can be among the ``k`` nearest in a sorted lane.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n = len(vlane)
    out_idx = np.full((len(rows), k), -1, dtype=np.int64)
    out_gap = np.zeros((len(rows), k))
    if not len(rows) or k <= 0 or n < 2:
        return out_idx, out_gap
    offs = np.concatenate((np.arange(-k, 0), np.arange(1, k + 1)))
    cand = rows[:, None] + offs[None, :]
    valid = (cand >= 0) & (cand < n)
    cc = np.clip(cand, 0, n - 1)
    gaps = vlane.positions[cc] - vlane.positions[rows][:, None]
    ids = vlane.ids[cc]
    absg = np.where(valid, np.abs(gaps), np.inf)
    # lexsort along the last axis: |gap|, then downstream first, then id
    order = np.lexsort((ids, -gaps, absg), axis=-1)[:, :k]
    take_idx = np.take_along_axis(cc, order, axis=1)
    take_gap = np.take_along_axis(gaps, order, axis=1)
    take_ok = np.take_along_axis(valid, order, axis=1)
    width = order.shape[1]
    out_idx[:, :width] = np.where(take_ok, take_idx, -1)
    out_gap[:, :width] = np.where(take_ok, take_gap, 0.0)
    return out_idx, out_gap
