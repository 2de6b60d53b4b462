import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridcoop.world import RoadNetwork, Traffic, Vehicle

# fixed example streams by default; HYPOTHESIS_PROFILE=stress explores more
settings.register_profile("default", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criteria report one line each in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {msg}")


def random_traffic(rng: np.random.Generator, network: RoadNetwork, n: int) -> Traffic:
    """``n`` vehicles scattered uniformly over the lanes with unique ids."""
    vehicles = []
    for vid in range(n):
        lane = int(rng.integers(len(network.lanes)))
        length = network.lanes[lane].length
        vehicles.append(Vehicle(vid, lane, float(rng.uniform(0, length)),
                                float(rng.uniform(6, 13)), float(rng.uniform(-3, 3))))
    return Traffic.from_vehicles(network, vehicles)


@pytest.fixture
def net1():
    return RoadNetwork(1, 1)


@pytest.fixture
def net3():
    return RoadNetwork(3, 3)
