import numpy as np
import pytest

from sparsegeom.graph import WeightedGraph


def unit_triangle() -> WeightedGraph:
    return WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


def unit_path() -> WeightedGraph:
    return WeightedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])


def random_symmetric(rng, n):
    A = rng.standard_normal((n, n))
    return (A + A.T) / 2


def random_connected_graph(rng, n, p=0.4) -> WeightedGraph:
    """Erdos-Renyi graph plus a spanning path, so always connected."""
    edges = {(i, i + 1): rng.uniform(0.5, 1.5) for i in range(n - 1)}
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < p:
                edges[(i, j)] = rng.uniform(0.5, 1.5)
    return WeightedGraph.from_edges(n, [(u, v, w) for (u, v), w in edges.items()])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
