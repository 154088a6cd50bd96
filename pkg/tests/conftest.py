import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from womble import AreaGraph, DissimilarityData, adjacency_from_w, build_graph


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def path_graph5():
    return build_graph(np.array([(0, 1), (1, 2), (2, 3), (3, 4)]))


@pytest.fixture
def pair_graph():
    """Two areas, one border."""
    return AreaGraph(2, np.array([[0, 1]]))


def all_ones_adj(graph):
    return adjacency_from_w(graph, np.ones(graph.n_borders, dtype=np.uint8))


def dis_from_values(graph, values, names=None):
    return DissimilarityData.from_border_values(graph, np.asarray(values, float),
                                                metric_names=names)
