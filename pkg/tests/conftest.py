import numpy as np
import pytest

from graphau.graph import graph_from_edges


def random_edges(rng, n_users, n_items, n_edges):
    edges = np.stack([rng.integers(0, n_users, n_edges), rng.integers(0, n_items, n_edges)], axis=1)
    return np.unique(edges, axis=0)


def random_graph(seed, n_users=8, n_items=7, n_edges=20):
    rng = np.random.default_rng(seed)
    edges = random_edges(rng, n_users, n_items, n_edges)
    return graph_from_edges(edges, n_users, n_items), rng


@pytest.fixture
def small_graph():
    return random_graph(0)[0]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
