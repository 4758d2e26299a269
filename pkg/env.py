"""
Black-Box Load Distribution - Environments
===========================================
Egress picking, two-segment segment routing and the joint multi-agent
evaluation. The only thing handed back to the agents is what end-to-end
probing would reveal: per-route delays and the resulting mean delay.
"""

import logging
from dataclasses import dataclass
from typing import List, Dict, Tuple, Optional, Callable, Union, Sequence

import numpy as np

from models import (
    Topology, TrafficMatrix, SplitAction, EgressProblem, SegmentProblem,
    Observation, ConstraintViolation, RoutingError
)
from netsim import EcmpRouter, link_delays, smoothed_link_delays

logger = logging.getLogger(__name__)

Problem = Union[EgressProblem, SegmentProblem]


@dataclass
class RoutePlan:
    """
    A problem compiled against one topology. Every action coordinate is
    routed over one or two segments; `incidence[c, s]` is 1 when segment s
    is part of coordinate c's route.
    """
    problem: Problem
    segments: List[Tuple[int, int]]
    fractions: np.ndarray       # segments x links
    first: np.ndarray           # segment index of each coordinate's first segment
    second: np.ndarray          # second segment index, -1 when routed directly
    incidence: np.ndarray       # coordinates x segments
    block_index: np.ndarray

    def coordinate_delays(self, segment_delay: np.ndarray) -> np.ndarray:
        """D per coordinate = sum of its segment delays"""
        second = np.where(self.second >= 0, segment_delay[np.maximum(self.second, 0)], 0.0)
        return segment_delay[self.first] + second

    def segment_traffic(self, coordinate_traffic: np.ndarray) -> np.ndarray:
        """Traffic per segment; works on a single vector or a batch of rows"""
        return coordinate_traffic @ self.incidence


def _mean_cost(values: np.ndarray, delays: np.ndarray, block_demand: np.ndarray,
               offsets: np.ndarray) -> np.ndarray:
    """Demand-weighted mean delay; last axis runs over coordinates"""
    per_block = np.add.reduceat(values * delays, offsets, axis=-1)
    total = block_demand.sum()
    if total <= 0:
        return per_block.mean(axis=-1)
    return per_block @ block_demand / total


class BlackBoxNetwork:
    """
    The opaque network seen from its periphery. Holds the current topology
    and its router; `replace_topology` models a failure and rebuilds all
    cached routing state.
    """

    def __init__(self, topology: Topology):
        self.original_topology = topology
        self._install(topology)

    def _install(self, topology: Topology):
        self.topology = topology
        self.router = EcmpRouter(topology)
        self.position = topology.node_position()
        self._plans: Dict[int, RoutePlan] = {}
        self._all_pairs: Optional[np.ndarray] = None
        self._unreachable: set = set()

    @property
    def dropped_links(self) -> List[Tuple[int, int]]:
        """Directed links of the original topology missing from the current one"""
        current = {l.key for l in self.topology.links}
        return sorted({l.key for l in self.original_topology.links} - current)

    def replace_topology(self, topology: Topology) -> None:
        self._install(topology)
        logger.info("🔧 Topology replaced: %d link(s) down against the original, routing cache rebuilt",
                    len(self.dropped_links))

    # ── compilation ──────────────────────────────────────────────────────────
    def plan(self, problem: Problem) -> RoutePlan:
        key = id(problem)
        cached = self._plans.get(key)
        if cached is not None and cached.problem is problem:
            return cached
        if isinstance(problem, EgressProblem):
            routes = [((e, d),) for _, e, d in problem.coordinates()]
        else:
            routes = [((i, j),) if k == j else ((i, k), (k, j))
                      for _, i, k, j in problem.coordinates()]
        segments = sorted({seg for route in routes for seg in route})
        index = {seg: s for s, seg in enumerate(segments)}
        first = np.array([index[r[0]] for r in routes], dtype=int)
        second = np.array([index[r[1]] if len(r) > 1 else -1 for r in routes], dtype=int)
        incidence = np.zeros((len(routes), len(segments)))
        incidence[np.arange(len(routes)), first] = 1.0
        has_second = second >= 0
        incidence[np.nonzero(has_second)[0], second[has_second]] = 1.0
        plan = RoutePlan(problem, segments, self.router.fraction_matrix(segments),
                         first, second, incidence, problem.space.block_index)
        self._plans[key] = plan
        return plan

    def _all_pairs_fractions(self) -> np.ndarray:
        """(n*n) x links fractions, row-major over Topology.nodes; zero rows for unroutable pairs"""
        if self._all_pairs is None:
            nodes = self.topology.nodes
            n = len(nodes)
            matrix = np.zeros((n * n, self.topology.num_links))
            for a, src in enumerate(nodes):
                for b, dst in enumerate(nodes):
                    if a == b:
                        continue
                    try:
                        matrix[a * n + b] = self.router.link_fractions(src, dst)
                    except RoutingError:
                        self._unreachable.add((a, b))
            self._all_pairs = matrix
        return self._all_pairs

    # ── traffic ──────────────────────────────────────────────────────────────
    def block_demand(self, problem: Problem, tm_step: TrafficMatrix) -> np.ndarray:
        if isinstance(problem, EgressProblem):
            return problem.block_demand(tm_step)
        return problem.block_demand(tm_step, self.position)

    def controlled_pairs(self, problems: Sequence[Problem]) -> set:
        """(row, col) matrix entries that belong to segment-routing agents"""
        pairs = set()
        for problem in problems:
            if isinstance(problem, SegmentProblem):
                pairs.update((self.position[i], self.position[j]) for i, j in problem.pairs())
        return pairs

    def background_loads(self, tm_step: TrafficMatrix,
                         problems: Sequence[Problem] = ()) -> np.ndarray:
        """ECMP loads of every matrix entry not controlled by an agent"""
        if tm_step.n != len(self.topology.nodes):
            raise ValueError(f"Traffic matrix is {tm_step.n}x{tm_step.n}, "
                             f"topology has {len(self.topology.nodes)} nodes")
        demand = tm_step.demand.copy()
        for a, b in self.controlled_pairs(problems):
            demand[a, b] = 0.0
        fractions = self._all_pairs_fractions()
        for a, b in self._unreachable:
            if demand[a, b] > 0:
                raise RoutingError(self.topology.nodes[a], self.topology.nodes[b])
        return demand.ravel() @ fractions

    def agent_loads(self, problem: Problem, action: SplitAction,
                    tm_step: TrafficMatrix) -> np.ndarray:
        plan = self.plan(problem)
        traffic = action.values * self.block_demand(problem, tm_step)[plan.block_index]
        return plan.segment_traffic(traffic) @ plan.fractions

    def demand_triples(self, problems: Sequence[Problem], actions: Sequence[SplitAction],
                       tm_step: TrafficMatrix) -> List[Tuple[int, int, float]]:
        """Every routed (src, dst, amount) of a joint step, background included"""
        controlled = self.controlled_pairs(problems)
        nodes = self.topology.nodes
        triples = [(s, d, x) for s, d, x in tm_step.triples(nodes)
                   if (self.position[s], self.position[d]) not in controlled]
        for problem, action in zip(problems, actions):
            plan = self.plan(problem)
            traffic = action.values * self.block_demand(problem, tm_step)[plan.block_index]
            seg_traffic = plan.segment_traffic(traffic)
            triples.extend((s, d, float(x)) for (s, d), x in zip(plan.segments, seg_traffic))
        return triples

    # ── evaluation ───────────────────────────────────────────────────────────
    def _check_actions(self, problems: Sequence[Problem], actions: Sequence[SplitAction]):
        if len(problems) != len(actions):
            raise ValueError(f"{len(problems)} problems but {len(actions)} actions")
        for idx, (problem, action) in enumerate(zip(problems, actions)):
            if action.space != problem.space:
                raise ConstraintViolation(list(range(problem.space.n_blocks)), idx,
                                          "(action space does not match problem)")
            action.check_feasible(agent_index=idx if len(problems) > 1 else None)

    def multi_agent_evaluate(self, problems: Sequence[Problem], actions: Sequence[SplitAction],
                             tm_step: TrafficMatrix) -> List[Observation]:
        """All agents' traffic plus background share one load map"""
        self._check_actions(problems, actions)
        loads = self.background_loads(tm_step, problems)
        for problem, action in zip(problems, actions):
            loads = loads + self.agent_loads(problem, action, tm_step)
        delays = link_delays(loads, self.router.params)
        observations = []
        for problem, action in zip(problems, actions):
            plan = self.plan(problem)
            segment_delay = plan.fractions @ delays
            coord_delay = plan.coordinate_delays(segment_delay)
            block_demand = self.block_demand(problem, tm_step)
            cost = float(_mean_cost(action.values, coord_delay, block_demand,
                                    problem.space.offsets))
            segment_delays = {}
            if isinstance(problem, SegmentProblem):
                segment_delays = {seg: float(d) for seg, d in zip(plan.segments, segment_delay)}
            observations.append(Observation(
                state=block_demand / problem.normalization,
                measured_delays=coord_delay,
                block_demand=block_demand,
                mean_cost=cost,
                segment_delays=segment_delays,
            ))
        return observations

    def egress_evaluate(self, problem: EgressProblem, action: SplitAction,
                        tm_step: TrafficMatrix) -> Observation:
        return self.multi_agent_evaluate([problem], [action], tm_step)[0]

    def segment_evaluate(self, problem: SegmentProblem, action: SplitAction,
                         tm_step: TrafficMatrix) -> Observation:
        return self.multi_agent_evaluate([problem], [action], tm_step)[0]

    def joint_loads(self, problems: Sequence[Problem], actions: Sequence[SplitAction],
                    tm_step: TrafficMatrix) -> np.ndarray:
        loads = self.background_loads(tm_step, problems)
        for problem, action in zip(problems, actions):
            loads = loads + self.agent_loads(problem, action, tm_step)
        return loads

    def cost_function(
        self,
        problems: Sequence[Problem],
        actions: Sequence[SplitAction],
        agent: int,
        tm_step: TrafficMatrix,
        smoothed: bool = False,
    ) -> Callable[[np.ndarray], np.ndarray]:
        """
        Full-information objective of one agent with everybody else frozen:
        maps a batch of action vectors (rows) to mean delays.
        """
        problem = problems[agent]
        plan = self.plan(problem)
        fixed = self.background_loads(tm_step, problems)
        for idx, (other, action) in enumerate(zip(problems, actions)):
            if idx != agent:
                fixed = fixed + self.agent_loads(other, action, tm_step)
        block_demand = self.block_demand(problem, tm_step)
        coord_demand = block_demand[plan.block_index]
        offsets = problem.space.offsets
        delay_model = smoothed_link_delays if smoothed else link_delays
        params = self.router.params

        def cost(batch: np.ndarray) -> np.ndarray:
            batch = np.atleast_2d(batch)
            loads = fixed + plan.segment_traffic(batch * coord_demand) @ plan.fractions
            segment_delay = delay_model(loads, params) @ plan.fractions.T
            coord_delay = segment_delay @ plan.incidence.T
            return _mean_cost(batch, coord_delay, block_demand, offsets)

        return cost

    def routes_avoid(self, links: Sequence[Tuple[int, int]]) -> bool:
        """True when no compiled route crosses any of the given links"""
        banned = set(links)
        for plan in self._plans.values():
            for row in plan.fractions:
                for lid in np.nonzero(row)[0]:
                    if self.topology.links[lid].key in banned:
                        return False
        return True


def state_vector(problem: Problem, tm_step: TrafficMatrix,
                 position: Dict[int, int]) -> np.ndarray:
    """
    Current demands divided by the problem's normalization constant:
    prefix order for egress picking, row-major pair order for segment routing.
    """
    if isinstance(problem, EgressProblem):
        return problem.block_demand(tm_step) / problem.normalization
    return problem.block_demand(tm_step, position) / problem.normalization
