import numpy as np
import pytest

from hhons.mesh import build_cartesian, build_triangular


@pytest.fixture(scope="session")
def cart4():
    return build_cartesian(4, 4)


@pytest.fixture(scope="session")
def tri4():
    return build_triangular(4, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    lines = acceptance_log.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
