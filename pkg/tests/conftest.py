import numpy as np
import pytest

from chaplygin import BallModel, identity_inertia, random_inertia
from chaplygin.lie import random_group_point


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=[3, 4, 5])
def n(request):
    return request.param


@pytest.fixture
def random_model(n, rng):
    return BallModel(n, random_inertia(n, rng))


@pytest.fixture
def homogeneous_model(n):
    return BallModel(n, identity_inertia(n))


def random_points(rng, n, count):
    return [random_group_point(rng, n).matrix for _ in range(count)]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
