import numpy as np
import pytest

from emsurf import selftest


@pytest.fixture(scope="session")
def cell_geometry():
    return selftest.fixture_geometry()


@pytest.fixture(scope="session")
def solved_fixture():
    """Solved 2x2 patch array shared by the slower tests."""
    return selftest.fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
