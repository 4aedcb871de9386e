import numpy as np
import pytest

from gravityrank.graph import AttributeTable, DataSplit, DirectedWeightedGraph, mask_cold
from gravityrank import synthetic

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_graph(n, out_degree, rng, weight_low=0.05):
    src, dst, w = [], [], []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for j in rng.choice(others, size=min(out_degree, n - 1), replace=False):
            src.append(i)
            dst.append(int(j))
            w.append(float(rng.uniform(weight_low, 1.0)))
    return DirectedWeightedGraph.from_edges(n, src, dst, w)


def all_warm(graph):
    return mask_cold(graph, DataSplit(np.arange(graph.n), [], []))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_instance():
    """n=12, f=4 random attributed graph with every node warm."""
    r = np.random.default_rng(7)
    g = random_graph(12, 3, r)
    attrs = AttributeTable(r.normal(size=(12, 4)))
    return g, attrs, all_warm(g)


@pytest.fixture(scope="session")
def planted100():
    return synthetic.planted_dataset(n=100, k=5, seed=0)


@pytest.fixture(scope="session")
def sample_data():
    from gravityrank.graph import load_dataset

    return load_dataset(*synthetic.sample_paths())
