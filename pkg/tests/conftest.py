import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fundgap import Disk, Interval, Rectangle, solve, solve_1d  # noqa: E402
from fundgap.groundfield import LogGradientField  # noqa: E402


@pytest.fixture(scope="session")
def interval_gs():
    return solve_1d(1.0, None, 1000)


@pytest.fixture(scope="session")
def interval_field(interval_gs):
    return LogGradientField(interval_gs)


@pytest.fixture(scope="session")
def disk_gs():
    return solve(Disk(1.0), None, 1 / 128)


@pytest.fixture(scope="session")
def disk_field(disk_gs):
    return LogGradientField(disk_gs)


@pytest.fixture(scope="session")
def coarse_disk_field():
    """h = 1/64, for Monte Carlo tests that only need qualitative accuracy."""
    return LogGradientField(solve(Disk(1.0), None, 1 / 64))


@pytest.fixture(scope="session")
def square_gs():
    return solve(Rectangle(1.0, 1.0), None, 1 / 64)


@pytest.fixture(scope="session")
def square_field(square_gs):
    return LogGradientField(square_gs)


@pytest.fixture(scope="session")
def interval():
    return Interval(1.0)
