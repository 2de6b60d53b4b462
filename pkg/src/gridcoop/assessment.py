"""Safety value and density indicator.

The safety value scores how comfortable a vehicle's situation is from its
nearest neighbour (distance and time to collision) and its front vehicle's
acceleration.  Lower is riskier.  The density indicator compares local
spacing around a vehicle with the mean spacing of its whole lane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .virtual_lane import VirtualLane
from .world import LANE_LENGTH


@dataclass(frozen=True)
class SVParams:
    alpha_d: float = 10.0
    beta_d: float = 10.0
    alpha_t: float = 1.5
    beta_t: float = 2.0
    alpha_acc: float = 1.5
    beta_acc: float = 12.0
    lambda_acc: float = 0.2
    sv_max: float = 20.0
    sv_min: float = -20.0
    d_threshold: float = 10.0
    # distance used when a vehicle has no neighbour at all
    open_road: float = 2 * LANE_LENGTH

    def __post_init__(self):
        if not self.alpha_d > 0:
            raise ValueError("alpha_d must be positive")
        if not self.sv_min < self.sv_max:
            raise ValueError("sv_min must be below sv_max")
        if not self.d_threshold > 0:
            raise ValueError("d_threshold must be positive")
        if not self.open_road > 0:
            raise ValueError("open_road must be positive")


DEFAULT_SV = SVParams()


@dataclass(frozen=True)
class SafetyValue:
    sv_d: float
    sv_t: float
    sv_acc: float
    combined: float


def distance_sv(d_nearest: float, params: SVParams = DEFAULT_SV) -> float:
    if not d_nearest > 0:
        raise ValueError(f"non-positive distance {d_nearest}: vehicles already overlap")
    return params.beta_d * math.log(d_nearest / params.alpha_d)


def ttc(gap: float, closing_speed: float) -> float:
    """Time to collision; infinite unless the gap is closing."""
    if closing_speed > 0:
        return gap / closing_speed
    return math.inf


def time_sv(t_nearest: float, params: SVParams = DEFAULT_SV) -> float:
    if 0 < t_nearest < 1:
        return -((params.alpha_t / math.tanh(-t_nearest)) ** params.beta_t)
    return 2.0


def accel_sv(d_front: float, acc_front: float, params: SVParams = DEFAULT_SV) -> float:
    if acc_front == 0:
        return 0.0
    ratio = min(d_front / params.d_threshold, params.alpha_acc)
    return params.lambda_acc * acc_front * params.beta_acc * math.log(ratio)


def combine_sv(sv_d: float, sv_t: float, sv_acc: float, params: SVParams = DEFAULT_SV) -> float:
    return min(max(sv_d + sv_t + sv_acc, params.sv_min), params.sv_max)


def safety_value(d_nearest: float, closing: float, d_front: float, acc_front: float,
                 params: SVParams = DEFAULT_SV) -> SafetyValue:
    d = min(d_nearest, params.open_road)
    sd = distance_sv(d, params)
    st = time_sv(ttc(d, closing), params)
    sa = accel_sv(min(d_front, params.open_road), acc_front, params)
    return SafetyValue(sd, st, sa, combine_sv(sd, st, sa, params))


def combined_sv_for(vehicle_id: int, vlane: VirtualLane,
                    params: SVParams = DEFAULT_SV) -> SafetyValue:
    """Safety value of one vehicle from its neighbours on ``vlane``.

    The nearest entry (either side) sets the distance and time terms; the
    nearest downstream entry sets the acceleration term.
    """
    i = vlane.index_of(vehicle_id)
    pos, vel = vlane.positions, vlane.velocities
    gaps = pos - pos[i]
    others = np.arange(len(vlane)) != i
    if not others.any():
        return safety_value(math.inf, 0.0, math.inf, 0.0, params)
    cand = np.nonzero(others)[0]
    g = gaps[cand]
    # nearest first, equal distances prefer downstream, then lower id
    j = cand[np.lexsort((vlane.ids[cand], -g, np.abs(g)))[0]]
    d = abs(gaps[j])
    if d <= 0:
        raise ValueError(f"vehicle {vehicle_id} overlaps vehicle {int(vlane.ids[j])}")
    closing = vel[i] - vel[j] if gaps[j] > 0 else vel[j] - vel[i]
    ahead = cand[g > 0]
    if len(ahead):
        f = ahead[np.argmin(gaps[ahead])]
        d_front, acc_front = gaps[f], vlane.accelerations[f]
    else:
        d_front, acc_front = math.inf, 0.0
    return safety_value(d, closing, d_front, float(acc_front), params)


def sv_batch(d_nearest: np.ndarray, closing: np.ndarray, d_front: np.ndarray,
             acc_front: np.ndarray, params: SVParams = DEFAULT_SV, floor: float = 1e-9):
    """Vectorised safety value.  Returns ``(combined, sv_d, sv_t, sv_acc)``.

    Distances are floored at ``floor`` instead of raising, so overlapping
    pairs score ``sv_min``; infinite distances are capped at the open road.
    """
    d = np.clip(d_nearest, floor, params.open_road)
    sd = params.beta_d * np.log(d / params.alpha_d)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = np.where(closing > 0, d / np.where(closing > 0, closing, 1.0), np.inf)
    sens = (t > 0) & (t < 1)
    ts = np.where(sens, t, 0.5)
    st = np.where(sens, -((params.alpha_t / np.tanh(-ts)) ** params.beta_t), 2.0)
    df = np.clip(d_front, floor, params.open_road)
    ratio = np.minimum(df / params.d_threshold, params.alpha_acc)
    sa = np.where(acc_front != 0, params.lambda_acc * acc_front * params.beta_acc * np.log(ratio), 0.0)
    comb = np.clip(sd + st + sa, params.sv_min, params.sv_max)
    return comb, sd, st, sa


def density_indicator(lane_positions, index: int, n: int = 5) -> float:
    """Deviation of the local mean spacing around ``index`` from the lane mean.

    ``lane_positions`` must be sorted ascending (downstream last).  Windows
    running past either end of the lane clamp to the extreme vehicles.
    """
    p = np.asarray(lane_positions, dtype=float)
    N = len(p)
    if N < 2:
        return 0.0
    if not 0 <= index < N:
        raise IndexError(index)
    pf = p[min(index + n, N - 1)]
    pl = p[max(index - n, 0)]
    return abs(abs(pf - pl) / (2 * n) - abs(p[-1] - p[0]) / (N - 1))


def density_indicators(lane_positions, n: int = 5) -> np.ndarray:
    """:func:`density_indicator` for every vehicle of a sorted lane."""
    p = np.asarray(lane_positions, dtype=float)
    N = len(p)
    if N < 2:
        return np.zeros(N)
    idx = np.arange(N)
    pf = p[np.minimum(idx + n, N - 1)]
    pl = p[np.maximum(idx - n, 0)]
    return np.abs(np.abs(pf - pl) / (2 * n) - abs(p[-1] - p[0]) / (N - 1))


def lane_safety(vlane: VirtualLane, rows, params: SVParams = DEFAULT_SV):
    """Safety values of the entries ``rows`` of a virtual lane.

    In a sorted lane the nearest downstream entry is the next one and the
    nearest upstream entry the previous one, so this needs no search.
    Returns ``(combined, d_front, d_behind)``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n = len(vlane)
    pos, vel, acc = vlane.positions, vlane.velocities, vlane.accelerations
    nxt = np.minimum(rows + 1, n - 1)
    prv = np.maximum(rows - 1, 0)
    has_f = rows + 1 < n
    has_b = rows > 0
    df = np.where(has_f, pos[nxt] - pos[rows], np.inf)
    db = np.where(has_b, pos[rows] - pos[prv], np.inf)
    front = df <= db
    dn = np.where(front, df, db)
    vn = np.where(front, vel[nxt], vel[prv])
    closing = np.where(front, vel[rows] - vn, vn - vel[rows])
    closing = np.where(np.isfinite(dn), closing, 0.0)
    acc_f = np.where(has_f, acc[nxt], 0.0)
    return sv_batch(dn, closing, df, acc_f, params)[0], df, db
