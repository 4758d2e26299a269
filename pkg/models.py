"""
Black-Box Load Distribution - Data Models
==========================================
Defines the data structures shared by the simulator, the environments,
the learning agents and the experiment engine.
"""

from dataclasses import dataclass, field
from typing import List, Dict, Optional, Tuple, Iterator
from enum import Enum

import numpy as np


# ── Errors ────────────────────────────────────────────────────────────────────
class BlackBoxError(ValueError):
    """Base class for every error raised by the simulator stack"""


class RoutingError(BlackBoxError):
    """No route exists between a pair of nodes"""

    def __init__(self, src: int, dst: int, reason: str = "unreachable"):
        self.src = src
        self.dst = dst
        super().__init__(f"No route from {src} to {dst} ({reason})")


class MutationError(BlackBoxError):
    """A topology mutation cannot be applied"""


class ParseError(BlackBoxError):
    """Malformed input file"""

    def __init__(self, message: str, line_number: Optional[int] = None, path: str = ""):
        self.line_number = line_number
        self.path = path
        where = f"{path}:{line_number}: " if line_number is not None else (f"{path}: " if path else "")
        super().__init__(f"{where}{message}")


class ConstraintViolation(BlackBoxError):
    """A split action leaves the block-simplex polytope"""

    def __init__(self, blocks: List[int], agent_index: Optional[int] = None, detail: str = ""):
        self.blocks = list(blocks)
        self.agent_index = agent_index
        who = f"agent {agent_index}: " if agent_index is not None else ""
        super().__init__(f"{who}infeasible split in blocks {self.blocks} {detail}".rstrip())


class ScalingError(BlackBoxError):
    """Traffic cannot be scaled to a utilization target"""


class ConfigError(BlackBoxError):
    """Experiment configuration is invalid"""


class ExperimentError(BlackBoxError):
    """A module error aborted an experiment run"""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"Experiment aborted at step {step}: {cause}")


# ── Enums ─────────────────────────────────────────────────────────────────────
class ProblemKind(Enum):
    """The two load distribution problems"""
    EGRESS = "egress"
    SEGMENT = "segment"


class AgentKind(Enum):
    """Decision makers available to an experiment"""
    CORL = "corl"
    CORL_FW = "corl-fw"
    DDPG = "ddpg"
    EQUAL_SPLIT = "equal-split"
    FW_ORACLE = "fw-oracle"

    def is_learning(self) -> bool:
        """Agents that train a critic from observed delays"""
        return self in (AgentKind.CORL, AgentKind.CORL_FW, AgentKind.DDPG)


# ── Network ───────────────────────────────────────────────────────────────────
DEFAULT_SERVICE_WEIGHT = 0.001   # seconds
DEFAULT_PROPAGATION = 0.001      # seconds
DEFAULT_CONGESTION_DELAY = 1.0   # seconds, D


@dataclass(frozen=True)
class Link:
    """Directed link with the parameters of the queueing delay model"""
    src: int
    dst: int
    capacity: float                                   # C, traffic units
    service_weight: float = DEFAULT_SERVICE_WEIGHT    # w = 1/mu, seconds
    propagation: float = DEFAULT_PROPAGATION          # p, seconds
    congestion_delay: float = DEFAULT_CONGESTION_DELAY  # D, seconds

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"Self-loop on node {self.src}")
        if not self.capacity > 0:
            raise ValueError(f"Invalid capacity on {self.src}->{self.dst}: {self.capacity}")
        if not self.service_weight > 0:
            raise ValueError(f"Invalid service weight on {self.src}->{self.dst}: {self.service_weight}")
        if self.propagation < 0:
            raise ValueError(f"Invalid propagation on {self.src}->{self.dst}: {self.propagation}")
        if not self.congestion_delay > 0:
            raise ValueError(f"Invalid congestion delay on {self.src}->{self.dst}: {self.congestion_delay}")

    @property
    def key(self) -> Tuple[int, int]:
        return (self.src, self.dst)

    def reversed(self) -> "Link":
        """Same parameters, opposite direction"""
        return Link(self.dst, self.src, self.capacity, self.service_weight,
                    self.propagation, self.congestion_delay)


@dataclass(frozen=True)
class Topology:
    """
    Directed graph of links. Link ids are positions in `links`.
    Undirected topologies hold both directions of every edge.
    """
    nodes: Tuple[int, ...]
    links: Tuple[Link, ...]
    directed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ValueError("Duplicate node ids in topology")
        seen = set()
        for link in self.links:
            if link.src not in node_set or link.dst not in node_set:
                raise ValueError(f"Link {link.src}->{link.dst} references unknown node")
            if link.key in seen:
                raise ValueError(f"Duplicate link {link.src}->{link.dst}")
            seen.add(link.key)
        if not self.directed:
            for link in self.links:
                if (link.dst, link.src) not in seen:
                    raise ValueError(f"Undirected topology missing reverse of {link.src}->{link.dst}")
        object.__setattr__(self, "_index", {link.key: i for i, link in enumerate(self.links)})

    @classmethod
    def from_edges(cls, edges: List[Link], nodes: Optional[List[int]] = None,
                   directed: bool = False) -> "Topology":
        """Build a topology; undirected edges expand to symmetric link pairs"""
        links = list(edges) if directed else [l for e in edges for l in (e, e.reversed())]
        if nodes is None:
            nodes = sorted({n for l in links for n in (l.src, l.dst)})
        return cls(tuple(nodes), tuple(links), directed)

    @property
    def num_links(self) -> int:
        return len(self.links)

    def link_id(self, src: int, dst: int) -> int:
        return self._index[(src, dst)]

    def has_link(self, src: int, dst: int) -> bool:
        return (src, dst) in self._index

    def node_position(self) -> Dict[int, int]:
        """node id -> row/column index used by traffic matrices"""
        return {n: i for i, n in enumerate(self.nodes)}

    def capacities(self) -> np.ndarray:
        return np.array([l.capacity for l in self.links], dtype=float)

    def undirected_edges(self) -> List[Tuple[int, int]]:
        """Each undirected edge once, as (low, high)"""
        return sorted({(min(l.src, l.dst), max(l.src, l.dst)) for l in self.links})

    def without(self, src: int, dst: int) -> "Topology":
        """Copy with src->dst removed (and dst->src when undirected)"""
        dropped = {(src, dst)} if self.directed else {(src, dst), (dst, src)}
        return Topology(self.nodes, tuple(l for l in self.links if l.key not in dropped), self.directed)


@dataclass
class LinkLoadMap:
    """Traffic per link, indexed by link id"""
    load: np.ndarray

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        if np.any(self.load < -1e-9):
            raise ValueError("Negative link load")

    def __getitem__(self, link_id: int) -> float:
        return float(self.load[link_id])

    def __len__(self) -> int:
        return len(self.load)

    def utilization(self, topology: Topology) -> np.ndarray:
        return self.load / topology.capacities()


@dataclass(frozen=True)
class PathSet:
    """ECMP paths between two nodes with their traffic fractions"""
    src: int
    dst: int
    paths: Tuple[Tuple[Tuple[int, ...], float], ...]   # (link-id sequence, weight)

    def __post_init__(self):
        if not self.paths:
            raise ValueError(f"Empty path set {self.src}->{self.dst}")
        total = sum(w for _, w in self.paths)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Path weights {self.src}->{self.dst} sum to {total}")
        if any(w <= 0 for _, w in self.paths):
            raise ValueError("Path weights must be positive")
        if len({len(p) for p, _ in self.paths}) != 1:
            raise ValueError("ECMP paths must have equal hop length")

    def weights(self) -> List[float]:
        return [w for _, w in self.paths]

    def link_ids(self) -> set:
        return {lid for p, _ in self.paths for lid in p}


# ── Traffic ───────────────────────────────────────────────────────────────────
@dataclass
class GravityParams:
    """Per-node gravity weights p_in, p_out and per-step relative noise"""
    p_in: np.ndarray
    p_out: np.ndarray
    std_fraction: float = 0.01

    def __post_init__(self):
        self.p_in = np.asarray(self.p_in, dtype=float)
        self.p_out = np.asarray(self.p_out, dtype=float)
        if self.p_in.shape != self.p_out.shape or self.p_in.ndim != 1:
            raise ValueError("p_in and p_out must be vectors of equal length")
        if np.any(self.p_in < 0) or np.any(self.p_out < 0):
            raise ValueError("Gravity means must be non-negative")
        if not 0 <= self.std_fraction < 1:
            raise ValueError(f"Invalid std_fraction: {self.std_fraction}")

    @property
    def n(self) -> int:
        return len(self.p_in)


@dataclass
class TrafficMatrix:
    """
    Node x node demand (rows/columns follow Topology.nodes order) plus the
    per-prefix demand vector t_i used by egress picking.
    """
    demand: np.ndarray
    prefix_demand: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.demand = np.asarray(self.demand, dtype=float)
        self.prefix_demand = np.asarray(self.prefix_demand, dtype=float)
        if self.demand.ndim != 2 or self.demand.shape[0] != self.demand.shape[1]:
            raise ValueError(f"Traffic matrix must be square, got {self.demand.shape}")
        if np.any(self.demand < 0) or np.any(self.prefix_demand < 0):
            raise ValueError("Traffic demands must be non-negative")
        if np.any(np.diag(self.demand) != 0):
            raise ValueError("Traffic matrix diagonal must be zero")

    @property
    def n(self) -> int:
        return self.demand.shape[0]

    def scaled(self, factor: float) -> "TrafficMatrix":
        return TrafficMatrix(self.demand * factor, self.prefix_demand * factor)

    def triples(self, nodes: Tuple[int, ...],
                exclude: Optional[set] = None) -> List[Tuple[int, int, float]]:
        """Non-zero (src, dst, demand) entries, skipping excluded pairs"""
        exclude = exclude or set()
        rows, cols = np.nonzero(self.demand)
        return [(nodes[i], nodes[j], float(self.demand[i, j]))
                for i, j in zip(rows, cols)
                if (nodes[i], nodes[j]) not in exclude]


# ── Actions ───────────────────────────────────────────────────────────────────
FEASIBILITY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class BlockSimplexSpace:
    """Product of probability simplices, one block per prefix or pair"""
    block_sizes: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        if not self.block_sizes:
            raise ValueError("Action space needs at least one block")
        if any(b < 1 for b in self.block_sizes):
            raise ValueError(f"Invalid block sizes: {self.block_sizes}")

    @property
    def n_blocks(self) -> int:
        return len(self.block_sizes)

    @property
    def dim(self) -> int:
        return sum(self.block_sizes)

    @property
    def offsets(self) -> np.ndarray:
        """Start index of every block"""
        return np.concatenate([[0], np.cumsum(self.block_sizes)[:-1]]).astype(int)

    @property
    def block_index(self) -> np.ndarray:
        """Block number of every coordinate"""
        return np.repeat(np.arange(self.n_blocks), self.block_sizes)

    def blocks(self) -> Iterator[slice]:
        start = 0
        for size in self.block_sizes:
            yield slice(start, start + size)
            start += size

    def infeasible_blocks(self, values: np.ndarray, tol: float = FEASIBILITY_TOLERANCE) -> List[int]:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.dim,):
            return list(range(self.n_blocks))
        bad = []
        for b, sl in enumerate(self.blocks()):
            block = values[sl]
            if np.any(block < -tol) or abs(block.sum() - 1.0) > tol or not np.all(np.isfinite(block)):
                bad.append(b)
        return bad


@dataclass(frozen=True, eq=False)
class SplitAction:
    """Traffic split fractions, one simplex block per prefix/pair"""
    values: np.ndarray
    space: BlockSimplexSpace

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def check_feasible(self, agent_index: Optional[int] = None,
                       tol: float = FEASIBILITY_TOLERANCE) -> "SplitAction":
        bad = self.space.infeasible_blocks(self.values, tol)
        if bad:
            raise ConstraintViolation(bad, agent_index)
        return self

    def is_feasible(self, tol: float = FEASIBILITY_TOLERANCE) -> bool:
        return not self.space.infeasible_blocks(self.values, tol)

    def block(self, b: int) -> np.ndarray:
        start = int(self.space.offsets[b])
        return self.values[start:start + self.space.block_sizes[b]]


# ── Problems ──────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Prefix:
    """Destination aggregate reached through the black box"""
    prefix_id: int      # index into TrafficMatrix.prefix_demand
    destination: int    # node d(i)


@dataclass(frozen=True)
class EgressProblem:
    """Split each prefix's traffic over m egress points"""
    prefixes: Tuple[Prefix, ...]
    egresses: Tuple[int, ...]
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "prefixes", tuple(self.prefixes))
        object.__setattr__(self, "egresses", tuple(self.egresses))
        if not self.prefixes or not self.egresses:
            raise ValueError("Egress problem needs prefixes and egresses")
        if len(set(self.egresses)) != len(self.egresses):
            raise ValueError("Egress nodes must be distinct")
        if set(p.destination for p in self.prefixes) & set(self.egresses):
            raise ValueError("Prefix destinations must differ from egress nodes")
        if not self.normalization > 0:
            raise ValueError("State normalization must be positive")

    @property
    def space(self) -> BlockSimplexSpace:
        return BlockSimplexSpace(tuple(len(self.egresses) for _ in self.prefixes))

    @property
    def state_dim(self) -> int:
        return len(self.prefixes)

    def coordinates(self) -> List[Tuple[int, int, int]]:
        """(block, egress node, destination node) per action coordinate"""
        return [(b, e, p.destination)
                for b, p in enumerate(self.prefixes) for e in self.egresses]

    def block_demand(self, tm_step: TrafficMatrix) -> np.ndarray:
        """t_i for the current step"""
        return np.array([tm_step.prefix_demand[p.prefix_id] for p in self.prefixes], dtype=float)


@dataclass(frozen=True)
class SegmentProblem:
    """
    Route each (source, destination) pair over at most two segments.
    The direct option of a pair is encoded as middle k = j.
    """
    sources: Tuple[int, ...]
    destinations: Tuple[int, ...]
    middles: Tuple[int, ...]
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "destinations", tuple(self.destinations))
        object.__setattr__(self, "middles", tuple(self.middles))
        if not self.sources or not self.destinations:
            raise ValueError("Segment problem needs sources and destinations")
        if set(self.sources) & set(self.destinations):
            raise ValueError("Sources and destinations must be disjoint")
        if not self.normalization > 0:
            raise ValueError("State normalization must be positive")

    def pairs(self) -> List[Tuple[int, int]]:
        """Controlled pairs in row-major order"""
        return [(i, j) for i in self.sources for j in self.destinations]

    def pair_middles(self, src: int, dst: int) -> List[int]:
        """Candidate middles of a pair; the first entry is the direct route"""
        return [dst] + [k for k in self.middles if k != src and k != dst]

    @property
    def space(self) -> BlockSimplexSpace:
        return BlockSimplexSpace(tuple(len(self.pair_middles(i, j)) for i, j in self.pairs()))

    @property
    def state_dim(self) -> int:
        return len(self.sources) * len(self.destinations)

    def coordinates(self) -> List[Tuple[int, int, int, int]]:
        """(block, source, middle, destination) per action coordinate"""
        return [(b, i, k, j)
                for b, (i, j) in enumerate(self.pairs()) for k in self.pair_middles(i, j)]

    def block_demand(self, tm_step: TrafficMatrix, position: Dict[int, int]) -> np.ndarray:
        """T_ij for the current step"""
        return np.array([tm_step.demand[position[i], position[j]] for i, j in self.pairs()],
                        dtype=float)


# ── Observations and learning records ─────────────────────────────────────────
@dataclass
class Observation:
    """
    What the tomography module reports for one step.
    `measured_delays` is aligned with the action coordinates: D_ij for egress
    picking (reshape to prefixes x egresses), D_ikj for segment routing.
    """
    state: np.ndarray
    measured_delays: np.ndarray
    block_demand: np.ndarray
    mean_cost: float
    segment_delays: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def recompute_cost(self, action: SplitAction) -> float:
        """Demand-weighted mean delay from the measured delays"""
        per_block = np.add.reduceat(action.values * self.measured_delays,
                                    action.space.offsets)
        total = self.block_demand.sum()
        if total <= 0:
            return float(per_block.mean())
        return float(np.dot(self.block_demand, per_block) / total)


@dataclass
class Transition:
    """(s_t, a_t, c_t) stored in the replay buffer"""
    state: np.ndarray
    action: SplitAction
    cost: float

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        if not np.isfinite(self.cost) or self.cost < 0:
            raise ValueError(f"Invalid transition cost: {self.cost}")


@dataclass(frozen=True)
class FwConfig:
    """Frank-Wolfe stopping rules; step size is always 2/(k+2)"""
    max_iters: int = 100
    distance_tolerance: float = 1e-5
    zero_gradient_tolerance: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.distance_tolerance > 0:
            raise ValueError("distance_tolerance must be positive")


# ── Metrics ───────────────────────────────────────────────────────────────────
@dataclass
class MetricsRow:
    """One CSV row of an experiment"""
    step: int
    costs: List[float]
    moving_averages: List[float]
    reductions: List[float]
    baselines: List[float]
    system_cost: float
    wall_clock: float = 0.0

    def reduction_of(self, agent: int) -> float:
        """(baseline - cost) / baseline"""
        base = self.baselines[agent]
        if base == 0:
            return 0.0
        return (base - self.costs[agent]) / base
