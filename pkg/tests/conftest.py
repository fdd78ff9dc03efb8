import numpy as np
import pytest

from dynslip.assembly import build_system
from dynslip.mesh import build_disk_mesh

CRITERIA_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


def swirl(amp):
    """Smooth interior forcing used across the suite."""
    def f(x, y):
        return amp * np.sin(2 * np.pi * y), -amp * np.sin(2 * np.pi * x)
    return f


def rotation(x, y):
    return -np.asarray(y, dtype=float), np.asarray(x, dtype=float)


@pytest.fixture(scope="session")
def mesh2():
    return build_disk_mesh(2, 1.0)


@pytest.fixture(scope="session")
def sys2(mesh2):
    return build_system(mesh2, 1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
