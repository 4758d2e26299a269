import itertools

import networkx as nx
import numpy as np
import pytest

from conftest import make_topology
from models import Link, Topology, LinkLoadMap, RoutingError, MutationError
from netsim import (
    link_delay, link_delays, smoothed_link_delays, LinkParams, EcmpRouter, ecmp_paths,
    end_to_end_delay, accumulate_loads, fail_random_link, removable_links, is_connected,
    generate_topology
)


# ── delay model ───────────────────────────────────────────────────────────────
def test_link_delay_idle_is_service_plus_propagation():
    link = Link(0, 1, 10.0, 0.001, 0.001)
    assert link_delay(0.0, link) == pytest.approx(0.002)


def test_link_delay_half_load():
    link = Link(0, 1, 10.0, 0.001, 0.001)
    assert link_delay(5.0, link) == pytest.approx(0.001 / 0.5 + 0.001)


def test_saturated_link_pays_exactly_congestion_delay():
    link = Link(0, 1, 10.0, 0.001, 0.004, congestion_delay=1.0)
    assert link_delay(10.0, link) == 1.0 + 0.004
    assert link_delay(25.0, link) == 1.0 + 0.004


def test_queue_term_is_clamped_just_below_capacity():
    link = Link(0, 1, 10.0, 0.001, 0.002)
    assert link_delay(10.0 - 1e-8, link) == 1.0 + 0.002


@pytest.mark.parametrize("capacity,w,p,D", [
    (10.0, 0.001, 0.001, 1.0),
    (2.5, 0.01, 0.0, 0.5),
    (100.0, 0.0001, 0.02, 1.0),
])
def test_delay_sweep_monotone_and_bounded(capacity, w, p, D):
    link = Link(0, 1, capacity, w, p, D)
    loads = np.linspace(0.0, 1.5 * capacity, 1000)
    delays = np.array([link_delay(x, link) for x in loads])
    assert np.all(np.diff(delays) >= 0)
    assert np.all(delays <= D + p)
    assert delays[-1] == D + p


def test_vectorised_delays_match_scalar(triangle_topology):
    params = LinkParams.of(triangle_topology)
    loads = np.linspace(0, 12, triangle_topology.num_links)
    expected = [link_delay(x, l) for x, l in zip(loads, triangle_topology.links)]
    np.testing.assert_allclose(link_delays(loads, params), expected, rtol=0, atol=1e-15)


def test_smoothed_delays_agree_below_knee_and_keep_rising():
    topology = make_topology([(0, 1)])
    params = LinkParams.of(topology)
    below = np.full(topology.num_links, 5.0)
    np.testing.assert_allclose(smoothed_link_delays(below, params), link_delays(below, params))
    above = np.full(topology.num_links, 20.0)
    assert np.all(smoothed_link_delays(above, params) > link_delays(above, params))
    assert np.all(smoothed_link_delays(above + 1, params) > smoothed_link_delays(above, params))


# ── ECMP ──────────────────────────────────────────────────────────────────────
def test_square_splits_evenly_over_two_paths(square_topology):
    pathset = ecmp_paths(square_topology, 0, 2)
    assert sorted(pathset.weights()) == [0.5, 0.5]
    assert all(len(links) == 2 for links, _ in pathset.paths)


def test_single_path_on_a_line(line_topology):
    pathset = ecmp_paths(line_topology, 0, 2)
    ids = (line_topology.link_id(0, 1), line_topology.link_id(1, 2))
    assert pathset.paths == ((ids, 1.0),)


def test_unreachable_pair_raises():
    topology = make_topology([(0, 1), (2, 3)])
    with pytest.raises(RoutingError):
        ecmp_paths(topology, 0, 3)


def test_same_source_and_destination_raises(line_topology):
    with pytest.raises(RoutingError):
        EcmpRouter(line_topology).ecmp_paths(1, 1)


def _brute_force_paths(graph: nx.Graph, topology: Topology, src: int, dst: int):
    dist = nx.shortest_path_length(graph, target=dst)
    expected = {}
    for path in nx.all_shortest_paths(graph, src, dst):
        weight = 1.0
        for u in path[:-1]:
            hops = [v for v in graph.neighbors(u) if dist[v] == dist[u] - 1]
            weight = weight / len(hops)
        links = tuple(topology.link_id(u, v) for u, v in zip(path, path[1:]))
        expected[links] = weight
    return expected


def test_ecmp_matches_exhaustive_enumeration_on_random_graphs():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 200:
        n = int(rng.integers(3, 9))
        graph = nx.gnp_random_graph(n, float(rng.uniform(0.3, 0.8)),
                                    seed=int(rng.integers(1 << 30)))
        if not nx.is_connected(graph):
            continue
        topology = Topology.from_edges([Link(u, v, 10.0) for u, v in graph.edges()],
                                       nodes=list(graph.nodes()))
        router = EcmpRouter(topology)
        for src, dst in itertools.permutations(graph.nodes(), 2):
            got = {links: w for links, w in router.ecmp_paths(src, dst).paths}
            assert got == _brute_force_paths(graph, topology, src, dst)
            fractions = np.zeros(topology.num_links)
            for links, w in got.items():
                for lid in links:
                    fractions[lid] += w
            np.testing.assert_allclose(router.link_fractions(src, dst), fractions, atol=1e-12)
        checked += 1


# ── loads and end-to-end delay ────────────────────────────────────────────────
def test_accumulate_loads_on_a_line(line_topology):
    loads = accumulate_loads([(0, 2, 3.0), (1, 2, 1.0)], line_topology)
    assert loads[line_topology.link_id(0, 1)] == 3.0
    assert loads[line_topology.link_id(1, 2)] == 4.0
    assert loads[line_topology.link_id(2, 1)] == 0.0


def test_ecmp_halves_load_per_branch(square_topology):
    loads = accumulate_loads([(0, 2, 4.0)], square_topology)
    assert loads[square_topology.link_id(0, 1)] == 2.0
    assert loads[square_topology.link_id(0, 3)] == 2.0


def test_end_to_end_delay_sums_links(line_topology):
    loads = accumulate_loads([(0, 2, 5.0)], line_topology)
    delay = end_to_end_delay(ecmp_paths(line_topology, 0, 2), loads, line_topology)
    assert delay == pytest.approx(2 * (0.001 / 0.5 + 0.001))


def test_end_to_end_delay_averages_over_paths():
    topology = make_topology([(0, 1, 0.001), (1, 2, 0.001), (2, 3, 0.003), (3, 0, 0.003)])
    idle = LinkLoadMap(np.zeros(topology.num_links))
    delay = end_to_end_delay(ecmp_paths(topology, 0, 2), idle, topology)
    assert delay == pytest.approx(0.5 * (2 * 0.002) + 0.5 * (2 * 0.004))


# ── failures ──────────────────────────────────────────────────────────────────
def test_failure_keeps_cycle_connected(square_topology):
    mutated = fail_random_link(square_topology, seed=1)
    assert mutated.num_links == square_topology.num_links - 2
    assert is_connected(mutated)


def test_failure_is_deterministic(square_topology):
    assert fail_random_link(square_topology, 5).links == fail_random_link(square_topology, 5).links


def test_tree_has_no_removable_link(line_topology):
    assert removable_links(line_topology) == []
    with pytest.raises(MutationError):
        fail_random_link(line_topology, seed=0)


def test_directed_failure_keeps_strong_connectivity():
    links = [Link(0, 1, 10.0), Link(1, 2, 10.0), Link(2, 0, 10.0), Link(0, 2, 10.0)]
    topology = Topology.from_edges(links, directed=True)
    assert removable_links(topology) == [(0, 2)]


# ── generator ─────────────────────────────────────────────────────────────────
def test_generated_topology_is_connected_with_tiers():
    topology = generate_topology(20, seed=3)
    assert topology.nodes == tuple(range(20))
    assert is_connected(topology)
    assert set(topology.capacities()) <= {10.0, 25.0, 50.0}


def test_generated_topology_is_reproducible():
    assert generate_topology(15, seed=9).links == generate_topology(15, seed=9).links


def test_accumulated_loads_are_linear_in_the_demands(square_topology):
    first = [(0, 2, 4.0), (1, 3, 1.5)]
    second = [(3, 1, 2.0), (0, 1, 0.5)]
    together = accumulate_loads(first + second, square_topology).load
    apart = accumulate_loads(first, square_topology).load + accumulate_loads(second, square_topology).load
    np.testing.assert_allclose(together, apart)
    scaled = accumulate_loads([(s, d, 3.0 * a) for s, d, a in first], square_topology).load
    np.testing.assert_allclose(scaled, 3.0 * accumulate_loads(first, square_topology).load)
