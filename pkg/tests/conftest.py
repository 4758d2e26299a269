"""Shared fixtures; the repository root holds flat modules, so put it on sys.path"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from models import Link, Topology, TrafficMatrix, Prefix, EgressProblem  # noqa: E402


def make_topology(edges, capacity=10.0, service_weight=0.001, propagation=0.001,
                  directed=False, nodes=None):
    """Topology from (u, v) or (u, v, propagation) tuples with uniform parameters"""
    links = []
    for edge in edges:
        p = edge[2] if len(edge) > 2 else propagation
        links.append(Link(edge[0], edge[1], capacity, service_weight, p))
    return Topology.from_edges(links, nodes=nodes, directed=directed)


def zero_tm(n, prefix_demand=()):
    return TrafficMatrix(np.zeros((n, n)), np.asarray(prefix_demand, dtype=float))


@pytest.fixture
def line_topology():
    """0 - 1 - 2"""
    return make_topology([(0, 1), (1, 2)])


@pytest.fixture
def square_topology():
    """0 - 1 - 2 - 3 - 0: two equal-cost paths between opposite corners"""
    return make_topology([(0, 1), (1, 2), (2, 3), (3, 0)])


@pytest.fixture
def star_topology():
    """Destination 0 with two symmetric single-link egresses 1 and 2"""
    return make_topology([(1, 0), (2, 0)])


@pytest.fixture
def triangle_topology():
    """Full triangle 0, 1, 2"""
    return make_topology([(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def star_problem():
    return EgressProblem((Prefix(0, 0),), (1, 2))
