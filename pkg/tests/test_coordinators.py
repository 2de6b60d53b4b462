import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_traffic
from gridcoop.assessment import combined_sv_for
from gridcoop.coordinators import (CLOUD_SRC, EDGE_SRC, ActionDirective, CloudNode, Decision, EdgeNode,
                                   assign_vehicles, cloud_decide, cloud_graphs, decide_cloud, decide_edges,
                                   directive_arrays, edge_decide, edge_virtual_lanes, make_edges, merge_cloud,
                                   record_transition, zone_of)
from gridcoop.nets import CLOUD, EDGE, Agent, ReplayBuffer
from gridcoop.state_graph import StateGraph
from gridcoop.world import RoadNetwork, Traffic, Vehicle

H = 153.5


@pytest.fixture(scope="module")
def edge_agent():
    return Agent.create(EDGE, 0)


@pytest.fixture(scope="module")
def cloud_agent():
    return Agent.create(CLOUD, 1)


class TestZones:
    def test_before_centre_is_assigned(self, net1):
        ln = net1.lanes[0]
        c = ln.centers[0]
        assert zone_of(net1, 0, np.array([c - 10.0]), 150.0).tolist() == [ln.intersections[0]]

    def test_boundaries(self, net1):
        c = net1.lanes[0].centers[0]
        z = zone_of(net1, 0, np.array([c - 150.0, c - 150.01, c + 3.74, c + 3.75]), 150.0)
        assert z.tolist() == [0, -1, 0, -1]

    def test_past_last_intersection_is_free(self, net3):
        ln = net3.lanes[0]
        assert zone_of(net3, 0, np.array([ln.centers[-1] + 20.0]), 150.0).tolist() == [-1]

    def test_overlap_goes_to_nearer_centre(self, net3):
        ln = net3.lanes[0]
        c0, c1 = ln.centers[:2]
        z = zone_of(net3, 0, np.array([c0 + 2.0, c1 - 5.0]), 150.0)
        assert z.tolist() == [ln.intersections[0], ln.intersections[1]]

    def test_tie_goes_downstream(self, net3):
        ln = net3.lanes[0]
        mid = 0.5 * (ln.centers[0] + ln.centers[1])
        assert zone_of(net3, 0, np.array([mid]), 150.0, clear=80.0).tolist() == [ln.intersections[1]]

    @given(seed=st.integers(0, 2**31), n=st.integers(0, 80))
    def test_assignment_partitions(self, seed, n):
        net = RoadNetwork(3, 3)
        t = random_traffic(np.random.default_rng(seed), net, n)
        out = assign_vehicles(t, make_edges(net))
        ids = [v for vs in out.values() for v in vs]
        assert len(ids) == len(set(ids))
        where = t.locate()
        for k, vs in out.items():
            for v in vs:
                li, j = where[v]
                assert zone_of(net, li, t.lanes[li].x[j:j + 1], 150.0)[0] == k


def _spread(net, n, rng):
    """n vehicles on the approaches of intersection 0, spaced at least 5 m apart."""
    lanes = sorted({cp.lane_a for cp in net.conflicts.by_intersection[0]}
                   | {cp.lane_b for cp in net.conflicts.by_intersection[0]})
    vs = []
    for vid in range(n):
        li = lanes[vid % len(lanes)]
        c = net.lanes[li].centers[net.lanes[li].intersections.index(0)]
        x = c - 8.0 - 7.0 * (vid // len(lanes)) - rng.uniform(0, 1)
        vs.append(Vehicle(vid, li, x, float(rng.uniform(6, 13)), float(rng.uniform(-3, 3))))
    return Traffic.from_vehicles(net, vs)


class TestEdge:
    def test_four_approach_lanes(self, net1):
        vls = edge_virtual_lanes(net1, 0, Traffic(net1), H)
        assert sorted(vl.base_lane for vl in vls) == [0, 1, 2, 3]

    def test_empty_zone(self, net1, edge_agent):
        assert edge_decide(EdgeNode(0, 150.0, edge_agent), Traffic(net1), H) == []

    def test_caps_at_graph_width(self, net1, edge_agent):
        t = _spread(net1, 20, np.random.default_rng(0))
        d = decide_edges([EdgeNode(0, 150.0, edge_agent)], t, H)[0]
        assert len(d.directives) == 15
        assert all(x.source == EDGE_SRC and -3 <= x.accel <= 3 for x in d.directives)
        # the chosen ones are the least safe of the twenty
        sv = {}
        for vl in edge_virtual_lanes(net1, 0, t, H):
            for vid in t.lanes[vl.base_lane].ids.tolist():
                sv[vid] = combined_sv_for(vid, vl).combined
        chosen = {x.vehicle for x in d.directives}
        assert max(sv[v] for v in chosen) <= min(sv[v] for v in sv if v not in chosen)
        assert all(d.scores[v] == pytest.approx(sv[v]) for v in chosen)

    def test_single_vehicle(self, net1, edge_agent):
        t = Traffic.from_vehicles(net1, [Vehicle(0, 0, 100.0)])
        ds = edge_decide(EdgeNode(0, 150.0, edge_agent), t, H)
        assert [d.vehicle for d in ds] == [0]

    def test_only_zone_members_are_instructed(self, net3, edge_agent):
        t = random_traffic(np.random.default_rng(4), net3, 60)
        edges = make_edges(net3, agent=edge_agent)
        assign = assign_vehicles(t, edges)
        for d in decide_edges(edges, t, H, assignment=assign):
            assert {x.vehicle for x in d.directives} <= set(assign[d.node])

    def test_deterministic(self, net3, edge_agent):
        t = random_traffic(np.random.default_rng(9), net3, 50)
        edges = make_edges(net3, agent=edge_agent)
        a = decide_edges(edges, t, H)
        b = decide_edges(edges, t, H)
        assert [d.directives for d in a] == [d.directives for d in b]

    def test_requires_policy(self, net1):
        with pytest.raises(ValueError):
            decide_edges([EdgeNode(0, 150.0)], Traffic(net1), H)

    def test_noise_needs_rng(self, net1, edge_agent):
        t = Traffic.from_vehicles(net1, [Vehicle(0, 0, 100.0)])
        with pytest.raises(ValueError):
            decide_edges([EdgeNode(0, 150.0, edge_agent)], t, H, sigma=0.1)


class TestCloud:
    def test_one_graph_per_busy_lane(self, net3, cloud_agent):
        t = random_traffic(np.random.default_rng(2), net3, 70)
        graphs = cloud_graphs(t)
        busy = sum(1 for ls in t.lanes if len(ls))
        assert len(graphs) == busy <= 12
        ds = decide_cloud(CloudNode(cloud_agent), t)
        for d in ds:
            assert {x.vehicle for x in d.directives} <= set(t.lanes[d.node].ids.tolist())
            assert all(x.source == CLOUD_SRC for x in d.directives)

    def test_every_vehicle_once(self, net3, cloud_agent):
        t = random_traffic(np.random.default_rng(3), net3, 40)
        got = sorted(d.vehicle for d in cloud_decide(CloudNode(cloud_agent), t))
        assert got == sorted(v.id for v in t.vehicles())

    def test_requires_policy(self, net3):
        with pytest.raises(ValueError):
            decide_cloud(CloudNode(), Traffic(net3))

    def test_merge_prefers_higher_density_then_lower_lane(self):
        g = StateGraph(60, np.zeros((60, 60, 3)), column_vehicles=[])

        def dec(lane, di):
            return Decision(lane, g, np.zeros(60), [ActionDirective(7, CLOUD_SRC, float(lane))], {7: di})
        assert merge_cloud([dec(3, 1.0), dec(1, 2.0)])[0].accel == 1.0
        assert merge_cloud([dec(3, 2.0), dec(1, 2.0)])[0].accel == 1.0
        assert merge_cloud([dec(3, 2.5), dec(1, 2.0)])[0].accel == 3.0


class TestPlumbing:
    def test_directive_range(self):
        with pytest.raises(ValueError):
            ActionDirective(0, EDGE_SRC, 3.5)

    def test_directive_arrays(self, net1):
        t = Traffic.from_vehicles(net1, [Vehicle(0, 0, 10.0), Vehicle(1, 0, 40.0), Vehicle(2, 2, 5.0)])
        arr = directive_arrays(t, [ActionDirective(1, EDGE_SRC, -2.0)])
        assert np.isnan(arr[0][0]) and arr[0][1] == -2.0 and np.isnan(arr[2][0])
        with pytest.raises(KeyError):
            directive_arrays(t, [ActionDirective(9, EDGE_SRC, 0.0)])

    def test_record_transition(self, net1):
        g = StateGraph(15, np.zeros((15, 15, 3)), column_vehicles=[])
        node = EdgeNode(0, 150.0, buffer=ReplayBuffer(4, 15))
        record_transition(node, g, np.zeros(15), 0.5, g)
        assert len(node.buffer) == 1 and node.buffer.r[0] == 0.5
        with pytest.raises(ValueError):
            record_transition(EdgeNode(0, 150.0), g, np.zeros(15), 0.5, g)
