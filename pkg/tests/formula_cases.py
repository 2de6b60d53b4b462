"""Worked examples for the closed-form pieces, shared by the unit tests and
the acceptance run.  Expected values are computed independently of the
library (hand arithmetic written out with ``math``)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from gridcoop import assessment as A
from gridcoop import end_controller as E
from gridcoop import nets as N
from gridcoop import virtual_lane as VL
from gridcoop.world import RoadNetwork, Traffic, Vehicle

EXACT = 1e-12
TRANSCENDENTAL = 1e-6


@dataclass(frozen=True)
class Case:
    name: str
    compute: Callable[[], object]
    expected: object
    tol: float = EXACT

    def check(self) -> tuple[bool, object]:
        got = self.compute()
        if isinstance(self.expected, (bool, str, tuple, list)) or self.expected is None:
            return got == self.expected, got
        return math.isclose(float(got), float(self.expected), rel_tol=0, abs_tol=self.tol), got


def _closing_pair_sv() -> float:
    net = RoadNetwork(1, 1)
    traffic = Traffic.from_vehicles(net, [Vehicle(0, 0, 20.0, 12.0, 0.0), Vehicle(1, 0, 25.0, 2.0, 0.0)])
    vl = VL.build_virtual_lane(net, 0, traffic)
    return A.combined_sv_for(0, vl).combined


def _crossing_order() -> tuple:
    net = RoadNetwork(1, 1)
    cp = net.conflicts.between(0, 2)[0]  # eastbound x northbound
    base_pos, other, other_pos = cp.on(0)
    traffic = Traffic.from_vehicles(net, [Vehicle(0, 0, base_pos - 5.0), Vehicle(1, other, other_pos - 10.0)])
    return tuple(VL.build_virtual_lane(net, 0, traffic).ids.tolist())


def _projection(offset: float) -> float:
    net = RoadNetwork(1, 1)
    cp = net.conflicts.between(0, 2)[0]
    base_pos, other, other_pos = cp.on(0)
    return VL.project(0, Vehicle(7, other, other_pos + offset), cp) - base_pos


def _nearest_three() -> tuple:
    net = RoadNetwork(1, 1)
    traffic = Traffic.from_vehicles(net, [Vehicle(i, 0, p) for i, p in enumerate([0.0, 3.0, 10.0])])
    vl = VL.build_virtual_lane(net, 0, traffic)
    return tuple(VL.nearest_neighbors(vl, 0, 1))


def _resolve_scene():
    net = RoadNetwork(1, 1)
    traffic = Traffic.from_vehicles(net, [Vehicle(0, 0, 40.0, 11.0, 0.0), Vehicle(1, 0, 52.0, 9.0, -1.0)])
    view = E.ego_view(traffic, 0, math.inf)
    a_end = E.onboard_action(view.sv, view.d_front, view.d_behind)
    return traffic, a_end


def _resolve_edge() -> float:
    traffic, a_end = _resolve_scene()
    return E.resolve(0, traffic, edge=2.5) - E.fuse_edge(a_end, 2.5)


def _resolve_both() -> float:
    traffic, a_end = _resolve_scene()
    return E.resolve(0, traffic, edge=2.5, cloud=-1.0) - E.fuse_cloud(E.fuse_edge(a_end, 2.5), -1.0)


def _edge_actor_width() -> int:
    net = N.ActorNet(N.EDGE, np.random.default_rng(0))
    return net.forward(np.zeros((15, 15, 3))).shape[1]


def _critic_concat(tier: str) -> int:
    return N.CriticNet(tier, np.random.default_rng(0)).concat_width


def _critic_action_sensitivity() -> bool:
    rng = np.random.default_rng(1)
    critic = N.CriticNet(N.EDGE, rng)
    s = rng.uniform(-1, 1, (1, 15, 15, 3))
    a = rng.uniform(-3, 3, (1, 15))
    b = a.copy()
    b[0, 4] += 1e-3
    return bool(critic.forward(s, a)[0] != critic.forward(s, b)[0])


def _soft_update() -> float:
    return float(N.soft_update(np.array(1.0), np.array(0.0), 0.99))


def cases() -> list[Case]:
    ln2 = math.log(2.0)
    t05 = -((1.5 / math.tanh(-0.5)) ** 2)
    return [
        # assessment
        Case("distance_sv d=20", lambda: A.distance_sv(20.0), 10 * ln2, TRANSCENDENTAL),
        Case("distance_sv d=5", lambda: A.distance_sv(5.0), -10 * ln2, TRANSCENDENTAL),
        Case("ttc 5 m closing 10 m/s", lambda: A.ttc(5.0, 10.0), 0.5),
        Case("time_sv t=0.5", lambda: A.time_sv(0.5), t05, TRANSCENDENTAL),
        Case("time_sv t=0.5 rounded value", lambda: A.time_sv(0.5), -10.535, 2e-3),
        Case("time_sv t=2", lambda: A.time_sv(2.0), 2.0),
        Case("accel_sv capped ratio", lambda: A.accel_sv(20.0, 1.0), 0.2 * 12 * math.log(1.5), TRANSCENDENTAL),
        Case("combine_sv inside bounds", lambda: A.combine_sv(10.0, 2.0, 0.0), 12.0),
        Case("combine_sv upper clip", lambda: A.combine_sv(30.0, 2.0, 0.0), 20.0),
        Case("combine_sv lower clip", lambda: A.combine_sv(-30.0, -10.0, 0.0), -20.0),
        Case("density indicator n=1", lambda: A.density_indicator([0, 10, 20, 30, 100], 1, n=1), 15.0),
        Case("closing pair combined sv", _closing_pair_sv, -10 * ln2 + t05, TRANSCENDENTAL),
        # end controller
        Case("onboard rear-biased", lambda: E.onboard_action(-9.0, 20.0, 5.0), -3.0),
        Case("onboard front-biased", lambda: E.onboard_action(-9.0, 5.0, 20.0), 3.0),
        Case("fuse_edge same sign", lambda: E.fuse_edge(1.0, 2.0), 2.0),
        Case("fuse_edge opposite sign", lambda: E.fuse_edge(2.0, -1.0), 2.0),
        Case("fuse_cloud weighted", lambda: E.fuse_cloud(2.0, -3.0), 0.8 * 2 + 0.2 * -3),
        Case("resolve with edge directive", _resolve_edge, 0.0),
        Case("resolve with edge and cloud", _resolve_both, 0.0),
        # virtual lane
        Case("1x1 conflict count", lambda: len(VL.conflict_points(RoadNetwork(1, 1))), 4),
        Case("3x3 conflict count", lambda: len(VL.conflict_points(RoadNetwork(3, 3))), 36),
        Case("projection 12 m upstream", lambda: _projection(-12.0), -12.0),
        Case("projection 5 m past", lambda: _projection(5.0), 5.0),
        Case("base vehicle ordered ahead", _crossing_order, (1, 0)),
        Case("nearest neighbour of 0 in {0,3,10}", _nearest_three, ((1, 3.0),)),
        # policy networks
        Case("edge action width", _edge_actor_width, 15),
        Case("edge flatten", lambda: N.ActorNet(N.EDGE, np.random.default_rng(0)).flat, 144),
        Case("cloud flatten", lambda: N.ActorNet(N.CLOUD, np.random.default_rng(0)).flat, 576),
        Case("edge critic concat", lambda: _critic_concat(N.EDGE), 144 + 15),
        Case("cloud critic concat", lambda: _critic_concat(N.CLOUD), 576 + 60),
        Case("critic responds to actions", _critic_action_sensitivity, True),
        Case("soft update tau=0.99", _soft_update, 0.99),
        Case("minibatch size", lambda: N.Hyperparams().batch, 48),
    ]
