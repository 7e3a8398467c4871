import numpy as np
import pytest

from epictrl import ModelParams, bundled_path, load_scenario

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def scenario():
    return load_scenario(bundled_path())


@pytest.fixture
def one_class():
    """Single class: lam=0.5, M=2, N=1000, gR=0.3, gD=0.001."""
    return ModelParams(0.5, np.array([[2.0]]), np.array([1000.0]), np.array([0.3]),
                       np.array([0.001]), np.array([1.0]))


@pytest.fixture
def two_class():
    return ModelParams(0.7, np.array([[3.0, 1.5], [0.8, 2.5]]), np.array([500.0, 800.0]),
                       np.array([0.2, 0.1]), np.array([0.01, 0.05]), np.array([1.0, 0.8]))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
