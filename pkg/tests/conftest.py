import numpy as np
import pytest

from saltspread import simulation
from saltspread.simulation import RouteSegment, RouteSpec


def flat_spec(miles=1.0, speed=30.0, **kw):
    return RouteSpec((RouteSegment(5280.0 * miles, 0.0, None, speed, **kw),), route_id="flat")


@pytest.fixture(scope="session")
def flat_10mi():
    return simulation.synth_route(flat_spec(10.0), seed=0)


@pytest.fixture(scope="session")
def flat_1mi():
    return simulation.synth_route(flat_spec(1.0), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][4:])):
            terminalreporter.write_line(line)
