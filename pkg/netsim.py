"""
Black-Box Load Distribution - Network Simulator
================================================
The opaque network: queueing delay model per link, ECMP shortest-path
routing, link-load accounting and link-failure mutation.
"""

import logging
from functools import lru_cache
from typing import List, Dict, Tuple, Iterable, Optional, NamedTuple

import numpy as np
import networkx as nx

from models import (
    Link, Topology, LinkLoadMap, PathSet, RoutingError, MutationError,
    DEFAULT_SERVICE_WEIGHT, DEFAULT_CONGESTION_DELAY
)

logger = logging.getLogger(__name__)


# ── Delay model ───────────────────────────────────────────────────────────────
def link_delay(load: float, link: Link) -> float:
    """
    Queueing + propagation delay of one link:
    min(w / (1 - x/C), D) + p below capacity, D + p at or above it.
    """
    if load < link.capacity:
        queue = link.service_weight / (1.0 - load / link.capacity)
        return min(queue, link.congestion_delay) + link.propagation
    return link.congestion_delay + link.propagation


class LinkParams(NamedTuple):
    """Per-link model parameters as arrays, indexed by link id"""
    capacity: np.ndarray
    service_weight: np.ndarray
    propagation: np.ndarray
    congestion_delay: np.ndarray

    @classmethod
    def of(cls, topology: Topology) -> "LinkParams":
        links = topology.links
        return cls(
            np.array([l.capacity for l in links], dtype=float),
            np.array([l.service_weight for l in links], dtype=float),
            np.array([l.propagation for l in links], dtype=float),
            np.array([l.congestion_delay for l in links], dtype=float),
        )


def link_delays(loads: np.ndarray, params: LinkParams) -> np.ndarray:
    """Vectorised link_delay; `loads` may carry leading batch dimensions"""
    x = np.maximum(loads, 0.0)
    util = x / params.capacity
    with np.errstate(divide="ignore", invalid="ignore"):
        queue = np.where(util < 1.0, params.service_weight / (1.0 - util), params.congestion_delay)
    return np.minimum(queue, params.congestion_delay) + params.propagation


def smoothed_link_delays(loads: np.ndarray, params: LinkParams) -> np.ndarray:
    """
    C1 surrogate of link_delays: the queueing term is continued linearly past
    the knee x* = C(1 - w/D), where it reaches D, with slope D^2 / (wC).
    Used only by the full-information oracle.
    """
    x = np.maximum(loads, 0.0)
    C, w, p, D = params
    knee = C * np.maximum(1.0 - w / D, 0.0)
    slope = D * D / (w * C)
    with np.errstate(divide="ignore", invalid="ignore"):
        below = w / (1.0 - x / C)
    queue = np.where(x < knee, below, D + slope * (x - knee))
    return queue + p


# ── ECMP routing ──────────────────────────────────────────────────────────────
class EcmpRouter:
    """
    Hop-count shortest paths with per-next-hop equal splitting.
    Distances to each destination come from one reverse BFS and are cached,
    as are path sets and per-pair link fractions. A router is bound to one
    immutable topology; a mutated topology gets a new router.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self.params = LinkParams.of(topology)
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(topology.nodes)
        for lid, link in enumerate(topology.links):
            self.graph.add_edge(link.src, link.dst, link_id=lid)
        self._reverse = self.graph.reverse(copy=False)
        self._dist: Dict[int, Dict[int, int]] = {}
        self._pathsets: Dict[Tuple[int, int], PathSet] = {}
        self._fractions: Dict[Tuple[int, int], np.ndarray] = {}

    def distances_to(self, dst: int) -> Dict[int, int]:
        if dst not in self._dist:
            if dst not in self.graph:
                raise RoutingError(dst, dst, "unknown node")
            self._dist[dst] = nx.single_source_shortest_path_length(self._reverse, dst)
        return self._dist[dst]

    def next_hops(self, node: int, dst: int) -> List[Tuple[int, int]]:
        """(next node, link id) for every successor on a shortest path"""
        dist = self.distances_to(dst)
        here = dist[node]
        return [(nxt, self.graph[node][nxt]["link_id"])
                for nxt in sorted(self.graph.successors(node))
                if dist.get(nxt) == here - 1]

    def _check_pair(self, src: int, dst: int):
        if src == dst:
            raise RoutingError(src, dst, "source equals destination")
        if src not in self.graph:
            raise RoutingError(src, dst, "unknown node")
        if src not in self.distances_to(dst):
            raise RoutingError(src, dst)

    def ecmp_paths(self, src: int, dst: int) -> PathSet:
        key = (src, dst)
        if key in self._pathsets:
            return self._pathsets[key]
        self._check_pair(src, dst)
        paths: List[Tuple[Tuple[int, ...], float]] = []

        def walk(node: int, links: Tuple[int, ...], weight: float):
            if node == dst:
                paths.append((links, weight))
                return
            hops = self.next_hops(node, dst)
            share = weight / len(hops)
            for nxt, lid in hops:
                walk(nxt, links + (lid,), share)

        walk(src, (), 1.0)
        pathset = PathSet(src, dst, tuple(paths))
        self._pathsets[key] = pathset
        return pathset

    def link_fractions(self, src: int, dst: int) -> np.ndarray:
        """Share of a unit src->dst demand carried by every link"""
        key = (src, dst)
        if key in self._fractions:
            return self._fractions[key]
        self._check_pair(src, dst)
        dist = self.distances_to(dst)
        flow = {src: 1.0}
        fractions = np.zeros(self.topology.num_links)
        # farthest first: all inflow of a node is known before it splits
        frontier = {src}
        order = []
        while frontier:
            order.extend(frontier)
            frontier = {nxt for node in frontier if node != dst
                        for nxt, _ in self.next_hops(node, dst)}
        for node in sorted(set(order), key=lambda n: (-dist[n], n)):
            if node == dst:
                continue
            hops = self.next_hops(node, dst)
            share = flow.get(node, 0.0) / len(hops)
            for nxt, lid in hops:
                fractions[lid] += share
                flow[nxt] = flow.get(nxt, 0.0) + share
        fractions.setflags(write=False)
        self._fractions[key] = fractions
        return fractions

    def fraction_matrix(self, pairs: Iterable[Tuple[int, int]]) -> np.ndarray:
        """Rows of link fractions, one per pair"""
        pairs = list(pairs)
        if not pairs:
            return np.zeros((0, self.topology.num_links))
        return np.vstack([self.link_fractions(s, d) for s, d in pairs])

    def accumulate(self, demands: Iterable[Tuple[int, int, float]]) -> np.ndarray:
        loads = np.zeros(self.topology.num_links)
        for src, dst, amount in demands:
            if amount:
                loads += amount * self.link_fractions(src, dst)
        return loads


@lru_cache(maxsize=16)
def router_for(topology: Topology) -> EcmpRouter:
    """Shared router per topology value"""
    return EcmpRouter(topology)


def ecmp_paths(topology: Topology, src: int, dst: int) -> PathSet:
    """All minimum-hop paths with recursive per-next-hop equal-split weights"""
    return router_for(topology).ecmp_paths(src, dst)


def end_to_end_delay(pathset: PathSet, loads: LinkLoadMap, topology: Topology) -> float:
    """Path-weighted sum of link delays"""
    total = 0.0
    for links, weight in pathset.paths:
        total += weight * sum(link_delay(loads[lid], topology.links[lid]) for lid in links)
    return total


def accumulate_loads(demands: Iterable[Tuple[int, int, float]], topology: Topology) -> LinkLoadMap:
    """Route every (src, dst, amount) over ECMP and add up per-link traffic"""
    return LinkLoadMap(router_for(topology).accumulate(demands))


# ── Failures ──────────────────────────────────────────────────────────────────
def is_connected(topology: Topology) -> bool:
    """Weak connectivity for undirected topologies, strong for directed ones"""
    if not topology.nodes:
        return False
    if topology.directed:
        graph = nx.DiGraph()
        graph.add_nodes_from(topology.nodes)
        graph.add_edges_from(l.key for l in topology.links)
        return nx.is_strongly_connected(graph)
    graph = nx.Graph()
    graph.add_nodes_from(topology.nodes)
    graph.add_edges_from(l.key for l in topology.links)
    return nx.is_connected(graph)


def removable_links(topology: Topology) -> List[Tuple[int, int]]:
    """Links (edges when undirected) whose removal keeps all nodes connected"""
    if not is_connected(topology):
        return []
    if not topology.directed:
        graph = nx.Graph()
        graph.add_nodes_from(topology.nodes)
        graph.add_edges_from(topology.undirected_edges())
        bridges = {(min(u, v), max(u, v)) for u, v in nx.bridges(graph)}
        return [e for e in topology.undirected_edges() if e not in bridges]
    graph = nx.DiGraph()
    graph.add_nodes_from(topology.nodes)
    graph.add_edges_from(l.key for l in topology.links)
    removable = []
    for link in topology.links:
        graph.remove_edge(*link.key)
        if nx.is_strongly_connected(graph):
            removable.append(link.key)
        graph.add_edge(*link.key)
    return removable


def fail_random_link(topology: Topology, seed) -> Topology:
    """Copy of the topology with one uniformly chosen non-disconnecting link dropped"""
    candidates = removable_links(topology)
    if not candidates:
        raise MutationError("No link can be removed without disconnecting the topology")
    rng = np.random.default_rng(seed)
    src, dst = candidates[int(rng.integers(len(candidates)))]
    logger.info("🔧 Dropping link %s-%s (%d candidates)", src, dst, len(candidates))
    return topology.without(src, dst)


# ── Topology generation ───────────────────────────────────────────────────────
def generate_topology(
    n: int,
    degree: int = 4,
    rewire: float = 0.2,
    seed: Optional[int] = None,
    capacity_tiers: Tuple[float, ...] = (10.0, 25.0, 50.0),
    propagation_range: Tuple[float, float] = (0.001, 0.005),
    service_weight: float = DEFAULT_SERVICE_WEIGHT,
    congestion_delay: float = DEFAULT_CONGESTION_DELAY,
) -> Topology:
    """
    Connected small-world topology. Capacities are assigned by edge
    betweenness: the busiest third of edges gets the largest tier.
    """
    if n < 3:
        raise ValueError(f"Need at least 3 nodes, got {n}")
    k = max(2, min(degree, n - 1))
    graph = nx.connected_watts_strogatz_graph(n, k, rewire, tries=1000, seed=seed)
    betweenness = nx.edge_betweenness_centrality(graph)
    edges = sorted((min(u, v), max(u, v)) for u, v in graph.edges())
    ranked = sorted(edges, key=lambda e: (betweenness.get(e, betweenness.get((e[1], e[0]), 0.0)), e))
    tiers = np.array_split(np.arange(len(ranked)), len(capacity_tiers))
    capacity = {}
    for tier, idx in zip(sorted(capacity_tiers), tiers):
        for i in idx:
            capacity[ranked[i]] = tier
    rng = np.random.default_rng(seed)
    links = [Link(u, v, capacity[(u, v)], service_weight,
                  float(rng.uniform(*propagation_range)), congestion_delay)
             for u, v in edges]
    return Topology.from_edges(links, nodes=list(range(n)), directed=False)
