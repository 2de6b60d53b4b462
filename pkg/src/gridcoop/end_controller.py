"""Onboard rules and fusion of end, edge and cloud accelerations.

Every vehicle computes its own safety value on an ego-centred virtual lane,
turns it into a rule acceleration, and then folds in whatever the edge and
cloud tiers instructed.  The end node always has the last word.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assessment import DEFAULT_SV, SVParams, combined_sv_for, sv_batch
from .virtual_lane import OWN, VirtualLane, _assemble
from .world import A_MAX, A_MIN, VEHICLE_SIZE, Traffic


@dataclass(frozen=True)
class FusionParams:
    eta: float = 3.0
    omega: float = 0.2
    a_min: float = A_MIN
    a_max: float = A_MAX

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 <= self.omega <= 1:
            raise ValueError("omega must lie in [0, 1]")


DEFAULT_FUSION = FusionParams()


def _clamp(a: float, p: FusionParams) -> float:
    return min(max(a, p.a_min), p.a_max)


def onboard_action(sv: float, d_front: float, d_behind: float,
                   params: FusionParams = DEFAULT_FUSION) -> float:
    """Rule acceleration from the safety value and the front/rear distances."""
    a = abs(sv / params.eta) if d_front <= d_behind else sv / params.eta
    return _clamp(a, params)


def fuse_edge(a_end: float, a_edge: float) -> float:
    return max(a_edge, a_end) if a_edge * a_end > 0 else a_end


def fuse_cloud(a_exe: float, a_cloud: float, params: FusionParams = DEFAULT_FUSION) -> float:
    return (1 - params.omega) * a_exe + params.omega * a_cloud


@dataclass(frozen=True)
class EgoView:
    """Rule inputs of one ego vehicle."""
    sv: float
    d_front: float
    d_behind: float


def ego_virtual_lane(traffic: Traffic, vehicle_id: int, horizon: float,
                     size: float = VEHICLE_SIZE) -> VirtualLane:
    """Own-lane traffic plus crossers at the conflicts the ego is near.

    A conflict counts while the ego is at most ``horizon`` before it and at
    most ``size`` past it; crossers qualify under the same window.
    """
    veh = traffic.vehicle(vehicle_id)
    lanes = traffic.lanes
    own = lanes[veh.lane]
    parts = [(own.ids, own.x, own.v, own.a, np.full(len(own), OWN, dtype=np.int64))]
    for cp in traffic.network.conflicts.by_lane[veh.lane]:
        base_pos, other, other_pos = cp.on(veh.lane)
        if not -size <= base_pos - veh.position <= horizon:
            continue
        q = lanes[other]
        dj = other_pos - q.x
        ok = (dj >= -size) & (dj <= horizon)
        if ok.any():
            parts.append((q.ids[ok], base_pos - dj[ok], q.v[ok], q.a[ok],
                          np.full(int(ok.sum()), cp.id, dtype=np.int64)))
    return _assemble(veh.lane, traffic.network.lanes[veh.lane].length, parts)


def ego_view(traffic: Traffic, vehicle_id: int, horizon: float,
             sv_params: SVParams = DEFAULT_SV, size: float = VEHICLE_SIZE) -> EgoView:
    vl = ego_virtual_lane(traffic, vehicle_id, horizon, size)
    sv = combined_sv_for(vehicle_id, vl, sv_params).combined
    i = vl.index_of(vehicle_id)
    gaps = np.delete(vl.positions - vl.positions[i], i)
    ahead, behind = gaps[gaps >= 0], -gaps[gaps < 0]
    d_f = float(ahead.min()) if len(ahead) else math.inf
    d_b = float(behind.min()) if len(behind) else math.inf
    return EgoView(sv, d_f, d_b)


def resolve(vehicle_id: int, traffic: Traffic, edge: float | None = None,
            cloud: float | None = None, horizon: float = math.inf,
            params: FusionParams = DEFAULT_FUSION, sv_params: SVParams = DEFAULT_SV,
            size: float = VEHICLE_SIZE) -> float:
    """Executed acceleration of one vehicle given optional tier directives."""
    view = ego_view(traffic, vehicle_id, horizon, sv_params, size)
    a = onboard_action(view.sv, view.d_front, view.d_behind, params)
    if edge is not None:
        a = fuse_edge(a, edge)
    if cloud is not None:
        a = fuse_cloud(a, cloud, params)
    return _clamp(a, params)


def ego_views(traffic: Traffic, horizon: float, sv_params: SVParams = DEFAULT_SV,
              size: float = VEHICLE_SIZE):
    """Vectorised :func:`ego_view` for every vehicle, as per-lane arrays.

    Returns a list of ``(sv, d_front, d_behind)`` triples aligned with the
    lane slots.
    """
    lanes = traffic.lanes
    by_lane = traffic.network.conflicts.by_lane
    out = []
    for li, ls in enumerate(lanes):
        n = len(ls)
        if not n:
            out.append((np.zeros(0), np.zeros(0), np.zeros(0)))
            continue
        x = ls.x
        pos, vel, acc, lo, hi = [x], [ls.v], [ls.a], [np.full(n, -np.inf)], [np.full(n, np.inf)]
        for cp in by_lane[li]:
            base_pos, other, other_pos = cp.on(li)
            q = lanes[other]
            if not len(q):
                continue
            dj = other_pos - q.x
            ok = (dj >= -size) & (dj <= horizon)
            m = int(ok.sum())
            if not m:
                continue
            pos.append(base_pos - dj[ok])
            vel.append(q.v[ok])
            acc.append(q.a[ok])
            lo.append(np.full(m, base_pos - horizon))
            hi.append(np.full(m, base_pos + size))
        pos = np.concatenate(pos)
        vel = np.concatenate(vel)
        acc = np.concatenate(acc)
        lo = np.concatenate(lo)
        hi = np.concatenate(hi)
        gap = pos[None, :] - x[:, None]
        vis = (x[:, None] >= lo[None, :]) & (x[:, None] <= hi[None, :])
        vis[np.arange(n), np.arange(n)] = False
        ga = np.where(vis & (gap >= 0), gap, np.inf)
        gb = np.where(vis & (gap < 0), -gap, np.inf)
        jf = ga.argmin(axis=1)
        jb = gb.argmin(axis=1)
        rows = np.arange(n)
        df = ga[rows, jf]
        db = gb[rows, jb]
        front = df <= db
        dn = np.where(front, df, db)
        vn = np.where(front, vel[jf], vel[jb])
        closing = np.where(front, ls.v - vn, vn - ls.v)
        has_f = np.isfinite(df)
        acc_f = np.where(has_f, acc[jf], 0.0)
        sv = sv_batch(dn, closing, df, acc_f, sv_params)[0]
        out.append((sv, df, db))
    return out


def resolve_all(traffic: Traffic, edge: Sequence[np.ndarray] | None = None,
                cloud: Sequence[np.ndarray] | None = None, horizon: float = math.inf,
                params: FusionParams = DEFAULT_FUSION, sv_params: SVParams = DEFAULT_SV,
                size: float = VEHICLE_SIZE) -> list[np.ndarray]:
    """Executed accelerations for every vehicle, one array per lane.

    ``edge`` and ``cloud`` hold per-lane directive arrays with NaN where a
    vehicle received no instruction from that tier.
    """
    out = []
    for li, (sv, df, db) in enumerate(ego_views(traffic, horizon, sv_params, size)):
        a = np.where(df <= db, np.abs(sv / params.eta), sv / params.eta)
        a = np.clip(a, params.a_min, params.a_max)
        if edge is not None:
            e = edge[li]
            a = np.where(~np.isnan(e) & (e * a > 0), np.maximum(e, a), a)
        if cloud is not None:
            c = cloud[li]
            a = np.where(~np.isnan(c), (1 - params.omega) * a + params.omega * c, a)
        out.append(np.clip(a, params.a_min, params.a_max))
    return out
