import numpy as np
import pytest

from cagra import exact_knn_graph, optimize


def uniform(n_points, dim, seed=0):
    return np.random.default_rng(seed).random((n_points, dim)).astype(np.float32)


@pytest.fixture(scope="session")
def small_data():
    return uniform(2000, 16, seed=1)


@pytest.fixture(scope="session")
def small_knn(small_data):
    return exact_knn_graph(small_data, 32)


@pytest.fixture(scope="session")
def small_graph(small_knn):
    return optimize(small_knn, 16)


@pytest.fixture(scope="session")
def small_queries():
    return uniform(200, 16, seed=2)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
