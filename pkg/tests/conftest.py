import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tapush.world import Goal, ObjectState, RobotState, TableSpec, World, WorldState

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def disc(x, y, r=0.05, mass=0.5, friction=0.4, vel=(0.0, 0.0, 0.0)):
    return ObjectState("disc", (r,), mass, friction, np.array([x, y, 0.0]),
                       velocity=np.array(vel, float))


def box(x, y, hx=0.06, hy=0.06, heading=0.0, mass=0.5, friction=0.4, vel=(0.0, 0.0, 0.0)):
    return ObjectState("box", (hx, hy), mass, friction, np.array([x, y, heading]),
                       velocity=np.array(vel, float))


def robot(x=0.0, y=0.0, theta=math.pi / 2, opening=0.14):
    return RobotState([x, y, theta, opening])


def far_robot():
    """A robot parked well away from everything on the test tables."""
    return robot(0.0, -5.0)


@pytest.fixture(scope="session")
def table():
    return TableSpec.rectangle(0.6, 0.6, goal=Goal((0.0, 0.45), 0.04))


@pytest.fixture(scope="session")
def world(table):
    return World(table)


@pytest.fixture(scope="session")
def big_world():
    return World(TableSpec.rectangle(20.0, 20.0, origin=(0.0, -10.0)))


def state_of(rob, *objects, t=0.0):
    return WorldState(rob, tuple(objects), t)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
