"""
Black-Box Load Distribution - Experiment Engine
================================================
Orchestrates one run: topology, problem roles, traffic, agents, the
per-step act / evaluate / learn loop, failure injection and metrics.
Also summarizes finished runs from their CSV files.
"""

import time
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from models import (
    Topology, TrafficMatrix, GravityParams, Prefix, EgressProblem, SegmentProblem,
    SplitAction, Transition, MetricsRow, ProblemKind, ConfigError, ExperimentError
)
from config import ExperimentConfig
from netsim import generate_topology, fail_random_link, accumulate_loads
from file_parser import (
    parse_topology_file, parse_coordinates_file, apply_geographic_propagation, load_tm_series
)
from traffic import (
    sample_gravity_params, gravity_mean_tm, perturb_tm, perturb_means,
    utilization_scale, step_rng
)
from env import BlackBoxNetwork, state_vector
from agents import Agent, DecisionContext, make_agent, equal_split

logger = logging.getLogger(__name__)

MOVING_WINDOW = 100
PROGRESS_EVERY = 100
CONVERGENCE_BAND = 0.05


def _int_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


# ── Topology and problem construction ─────────────────────────────────────────
def load_topology(config: ExperimentConfig, seed: Optional[int] = None) -> Topology:
    """From file when a path is configured, otherwise a generated small world"""
    if config.topology_path:
        topology = parse_topology_file(config.topology_path, directed=config.directed)
    else:
        topology = generate_topology(config.generate_nodes, config.generate_degree,
                                     config.generate_rewire, seed=seed)
    if config.coordinates_path:
        topology = apply_geographic_propagation(topology,
                                                parse_coordinates_file(config.coordinates_path))
    return topology


def _check_nodes(nodes: Sequence[int], topology: Topology, what: str):
    unknown = sorted(set(nodes) - set(topology.nodes))
    if unknown:
        raise ConfigError(f"{what} reference unknown nodes {unknown}")
    if len(set(nodes)) != len(nodes):
        raise ConfigError(f"{what} contain duplicates")


def _chunks(nodes: List[int], parts: int, what: str) -> List[List[int]]:
    if len(nodes) % parts:
        raise ConfigError(f"{len(nodes)} {what} cannot be shared equally by {parts} agents")
    size = len(nodes) // parts
    return [nodes[i * size:(i + 1) * size] for i in range(parts)]


def _build_egress(config: ExperimentConfig, topology: Topology,
                  rng: np.random.Generator) -> List[EgressProblem]:
    agents = config.agents
    pool = [int(n) for n in rng.permutation(topology.nodes)]
    if config.egress_nodes:
        _check_nodes(config.egress_nodes, topology, "problem.egress_nodes")
        egress_sets = _chunks(list(config.egress_nodes), agents, "egress nodes")
    else:
        needed = agents * config.egresses
        if needed > len(pool):
            raise ConfigError(f"{needed} egress roles requested on {len(pool)} nodes")
        egress_sets = [sorted(pool[i * config.egresses:(i + 1) * config.egresses])
                       for i in range(agents)]
    used = {n for s in egress_sets for n in s}
    if len(used) != sum(len(s) for s in egress_sets):
        raise ConfigError("Egress sets of different agents overlap")
    if config.destination_nodes:
        _check_nodes(config.destination_nodes, topology, "problem.destination_nodes")
        destinations = list(config.destination_nodes)
        if used & set(destinations):
            raise ConfigError("Prefix destinations must differ from egress nodes")
    else:
        free = [n for n in pool if n not in used]
        if config.prefixes == "all":
            destinations = sorted(free)
        else:
            if config.prefixes > len(free):
                raise ConfigError(f"{len(used) + config.prefixes} roles requested "
                                  f"on {len(topology.nodes)} nodes")
            destinations = sorted(free[:config.prefixes])
    if not destinations:
        raise ConfigError("No node left for prefix destinations")
    problems = []
    for a, egresses in enumerate(egress_sets):
        prefixes = tuple(Prefix(a * len(destinations) + b, d) for b, d in enumerate(destinations))
        problems.append(EgressProblem(prefixes, tuple(egresses)))
    return problems


def _build_segment(config: ExperimentConfig, topology: Topology,
                   rng: np.random.Generator) -> List[SegmentProblem]:
    agents = config.agents
    pool = [int(n) for n in rng.permutation(topology.nodes)]
    if config.source_nodes:
        _check_nodes(config.source_nodes, topology, "problem.source_nodes")
        source_sets = _chunks(list(config.source_nodes), agents, "source nodes")
    else:
        needed = agents * config.sources
        if needed > len(pool):
            raise ConfigError(f"{needed} source roles requested on {len(pool)} nodes")
        source_sets = [sorted(pool[i * config.sources:(i + 1) * config.sources])
                       for i in range(agents)]
    sources_all = {n for s in source_sets for n in s}
    if config.destination_nodes:
        _check_nodes(config.destination_nodes, topology, "problem.destination_nodes")
        destinations = list(config.destination_nodes)
        if sources_all & set(destinations):
            raise ConfigError("Sources and destinations must be disjoint")
    else:
        free = [n for n in pool if n not in sources_all]
        if config.destinations > len(free):
            raise ConfigError(f"{len(sources_all) + config.destinations} roles requested "
                              f"on {len(topology.nodes)} nodes")
        destinations = sorted(free[:config.destinations])
    problems = []
    for sources in source_sets:
        if config.middle_nodes:
            _check_nodes(config.middle_nodes, topology, "problem.middle_nodes")
            middles = list(config.middle_nodes)
        else:
            # the agent's own sources plus randomly drawn extra middle points
            others = [n for n in topology.nodes if n not in sources]
            if config.middles > len(others):
                raise ConfigError(f"{config.middles} middle points requested, "
                                  f"only {len(others)} candidates")
            extra = [int(n) for n in rng.choice(others, size=config.middles, replace=False)]
            middles = sorted(sources) + sorted(extra)
        problems.append(SegmentProblem(tuple(sources), tuple(destinations), tuple(middles)))
    return problems


def build_problem(config: ExperimentConfig, topology: Topology,
                  rng: np.random.Generator) -> List:
    """
    One problem per agent with node roles drawn without replacement.
    Egress picking: disjoint egress sets per agent, shared prefix destinations.
    Segment routing: disjoint source sets per agent, shared destinations,
    middles = the agent's sources plus `problem.middles` extra nodes.
    """
    if config.problem_kind == ProblemKind.EGRESS:
        return _build_egress(config, topology, rng)
    return _build_segment(config, topology, rng)


# ── Traffic ───────────────────────────────────────────────────────────────────
class TrafficSource:
    """
    Per-step traffic. Gravity mode: background gravity matrix plus
    exponentially drawn prefix means, both perturbed each step and scaled by
    one factor. Series mode: matrices replayed cyclically; for egress picking
    each prefix's demand is the traffic from its agent's egress set toward
    its destination, and those entries leave the background.
    """

    def __init__(
        self,
        seed: int,
        background: Optional[GravityParams] = None,
        prefix_means: Optional[np.ndarray] = None,
        factor: float = 1.0,
        series: Optional[List[TrafficMatrix]] = None,
        problems: Sequence = (),
        position: Optional[Dict[int, int]] = None,
    ):
        if background is None and not series:
            raise ValueError("Traffic source needs gravity parameters or a series")
        self.seed = seed
        self.background = background
        self.prefix_means = np.zeros(0) if prefix_means is None else np.asarray(prefix_means, float)
        self.factor = factor
        self.series = series
        self.problems = list(problems)
        self.position = position or {}

    def step(self, t: int) -> TrafficMatrix:
        if self.series:
            return self.factor_applied(self._from_series(self.series[t % len(self.series)]))
        tm = perturb_tm(self.background, self.seed, t)
        prefix = perturb_means(self.prefix_means, self.background.std_fraction,
                               step_rng(self.seed, t, 1))
        return self.factor_applied(TrafficMatrix(tm.demand, prefix))

    def mean(self) -> TrafficMatrix:
        if self.series:
            demand = np.mean([tm.demand for tm in self.series], axis=0)
            return self.factor_applied(self._from_series(TrafficMatrix(demand)))
        tm = gravity_mean_tm(self.background)
        return self.factor_applied(TrafficMatrix(tm.demand, self.prefix_means))

    def factor_applied(self, tm: TrafficMatrix) -> TrafficMatrix:
        return tm if self.factor == 1.0 else tm.scaled(self.factor)

    def _from_series(self, tm: TrafficMatrix) -> TrafficMatrix:
        egress = [p for p in self.problems if isinstance(p, EgressProblem)]
        if not egress:
            return tm
        demand = tm.demand.copy()
        size = max(pr.prefix_id for p in egress for pr in p.prefixes) + 1
        prefix = np.zeros(size)
        for problem in egress:
            rows = [self.position[e] for e in problem.egresses]
            for pr in problem.prefixes:
                col = self.position[pr.destination]
                prefix[pr.prefix_id] = tm.demand[rows, col].sum()
                demand[rows, col] = 0.0
        return TrafficMatrix(demand, prefix)


def build_traffic(config: ExperimentConfig, network: BlackBoxNetwork, problems: Sequence,
                  seed: int) -> TrafficSource:
    """Traffic source scaled so the equal-split max link utilization hits the target"""
    topology = network.topology
    position = network.position
    if config.tm_series:
        series = load_tm_series(config.tm_series)
        if series[0].n != len(topology.nodes):
            raise ConfigError(f"Traffic series has {series[0].n} nodes, "
                              f"topology has {len(topology.nodes)}")
        source = TrafficSource(seed, series=series, problems=problems, position=position)
        if config.utilization is None:
            return source
    else:
        background = sample_gravity_params(len(topology.nodes), config.traffic_rate, seed,
                                           config.std_fraction)
        prefix_means = np.zeros(0)
        egress = [p for p in problems if isinstance(p, EgressProblem)]
        if egress:
            count = sum(len(p.prefixes) for p in egress)
            prefix_means = np.random.default_rng([seed, 1]).exponential(1.0, count)
            # controlled traffic is agent_share of the background volume
            total = gravity_mean_tm(background).demand.sum()
            prefix_means *= config.agent_share * total / prefix_means.sum()
        source = TrafficSource(seed, background, prefix_means, problems=problems,
                               position=position)
    baseline = [equal_split(p.space) for p in problems]
    triples = network.demand_triples(problems, baseline, source.mean())
    source.factor = utilization_scale(triples, topology, config.utilization_target)
    logger.info("📈 Traffic scaled by %.4g to max utilization %.2f",
                source.factor, config.utilization_target)
    return source


def normalized(problems: Sequence, network: BlackBoxNetwork, mean_tm: TrafficMatrix) -> List:
    """Fix each problem's state normalization at its largest mean demand"""
    out = []
    for problem in problems:
        peak = float(np.max(network.block_demand(problem, mean_tm), initial=0.0))
        out.append(replace(problem, normalization=peak if peak > 0 else 1.0))
    return out


# ── Metrics ───────────────────────────────────────────────────────────────────
def agent_labels(agents: Sequence[Agent]) -> List[str]:
    return [f"{agent.kind.value}_{i}" for i, agent in enumerate(agents)]


def system_cost(costs: Sequence[float], demands: Sequence[float]) -> float:
    """Demand-weighted mean over agents; plain mean when nothing is sent"""
    total = float(np.sum(demands))
    if total <= 0:
        return float(np.mean(costs))
    return float(np.dot(costs, demands) / total)


def metrics_frame(rows: Sequence[MetricsRow], labels: Sequence[str],
                  wall_clock: bool = False) -> pd.DataFrame:
    """Fixed column order: step, costs, moving averages, reductions, baselines, system"""
    data: Dict[str, list] = {"step": [r.step for r in rows]}
    for prefix, attr in (("cost", "costs"), ("ma", "moving_averages"),
                         ("reduction", "reductions"), ("baseline", "baselines")):
        for i, label in enumerate(labels):
            data[f"{prefix}_{label}"] = [getattr(r, attr)[i] for r in rows]
    data["system_cost"] = [r.system_cost for r in rows]
    if wall_clock:
        data["wall_clock"] = [r.wall_clock for r in rows]
    return pd.DataFrame(data)


def write_metrics_csv(rows: Sequence[MetricsRow], labels: Sequence[str], path,
                      wall_clock: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics_frame(rows, labels, wall_clock).to_csv(path, index=False)
    logger.info("💾 Wrote %d rows to %s", len(rows), path)
    return path


# ── Engine ────────────────────────────────────────────────────────────────────
class ExperimentEngine:
    """
    One configured run. All randomness is derived from the master seed:
    topology, roles, traffic, failures and every agent get their own
    sub-seed, so two runs with the same config produce identical CSVs.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        topo_seed, role_seed, traffic_seed, failure_seed, agent_seed = \
            np.random.SeedSequence(config.seed).spawn(5)
        self.failure_seed = _int_seed(failure_seed)

        self.network = BlackBoxNetwork(load_topology(config, _int_seed(topo_seed)))
        problems = build_problem(config, self.network.topology, np.random.default_rng(role_seed))
        self.traffic = build_traffic(config, self.network, problems, _int_seed(traffic_seed))
        self.problems = normalized(problems, self.network, self.traffic.mean())

        options = config.agent_options()
        seeds = agent_seed.spawn(len(self.problems))
        self.agents: List[Agent] = [
            make_agent(config.kind_of(i), problem, seed=_int_seed(seeds[i]), **options)
            for i, problem in enumerate(self.problems)
        ]
        self.labels = agent_labels(self.agents)
        logger.info("📊 %s run: %d agent(s) %s on %d nodes / %d links, %d steps",
                    config.problem_kind.value, len(self.agents), ", ".join(self.labels),
                    len(self.network.topology.nodes), self.network.topology.num_links,
                    config.steps)

    def failure_due(self, t: int) -> bool:
        if t in self.config.failure_steps:
            return True
        every = self.config.failure_every
        return bool(every) and t > 0 and t % every == 0

    def inject_failure(self, t: int) -> None:
        """Drop one random link from the original topology; earlier failures are repaired"""
        mutated = fail_random_link(self.network.original_topology, seed=[self.failure_seed, t])
        self.network.replace_topology(mutated)
        logger.info("🔧 Link failure injected before step %d: %s down", t, self.network.dropped_links)

    def _check_invariants(self, actions: Sequence[SplitAction], tm: TrafficMatrix) -> None:
        for i, action in enumerate(actions):
            action.check_feasible(agent_index=i)
        joint = self.network.joint_loads(self.problems, actions, tm)
        triples = self.network.demand_triples(self.problems, actions, tm)
        reference = accumulate_loads(triples, self.network.topology).load
        tol = 1e-9 * max(1.0, float(np.max(np.abs(reference), initial=0.0)))
        if np.max(np.abs(joint - reference), initial=0.0) > tol:
            raise RuntimeError("Joint link loads disagree with per-demand accumulation")
        if not self.network.routes_avoid(self.network.dropped_links):
            raise RuntimeError("A route still crosses a failed link")
        logger.debug("Invariants hold")

    def baselines(self, tm: TrafficMatrix) -> List[float]:
        """Equal-split cost of every agent on the given matrix"""
        actions = [equal_split(p.space) for p in self.problems]
        return [o.mean_cost for o in self.network.multi_agent_evaluate(self.problems, actions, tm)]

    def run_experiment(self) -> List[MetricsRow]:
        config = self.config
        rows: List[MetricsRow] = []
        history: List[List[float]] = [[] for _ in self.agents]
        previous = [equal_split(p.space) for p in self.problems]
        baselines: List[float] = []
        for t in range(config.steps):
            started = time.perf_counter()
            try:
                if self.failure_due(t):
                    self.inject_failure(t)
                tm = self.traffic.step(t)
                if t == 0:
                    baselines = self.baselines(tm)
                states = [state_vector(p, tm, self.network.position) for p in self.problems]
                # simultaneous moves: everybody decides before the joint evaluation
                actions = []
                for i, (agent, state) in enumerate(zip(self.agents, states)):
                    context = DecisionContext(tm, self.network, self.problems, previous, i)
                    actions.append(agent.act(state, context))
                if config.debug:
                    self._check_invariants(actions, tm)
                observations = self.network.multi_agent_evaluate(self.problems, actions, tm)
                for agent, action, obs in zip(self.agents, actions, observations):
                    agent.learn(Transition(obs.state, action, obs.mean_cost))
            except ExperimentError:
                raise
            except Exception as e:
                logger.error("❌ Step %d failed: %s", t, e)
                raise ExperimentError(t, e) from e

            costs = [o.mean_cost for o in observations]
            for i, cost in enumerate(costs):
                history[i].append(cost)
            moving = [float(np.mean(h[-MOVING_WINDOW:])) for h in history]
            row = MetricsRow(
                step=t,
                costs=costs,
                moving_averages=moving,
                reductions=[0.0] * len(costs),
                baselines=list(baselines),
                system_cost=system_cost(costs, [o.block_demand.sum() for o in observations]),
                wall_clock=time.perf_counter() - started,
            )
            row.reductions = [row.reduction_of(i) for i in range(len(costs))]
            rows.append(row)
            previous = actions
            if (t + 1) % PROGRESS_EVERY == 0 or t + 1 == config.steps:
                logger.info("⏱️ Step %d/%d  moving average %s", t + 1, config.steps,
                            ", ".join(f"{l}={m:.5f}" for l, m in zip(self.labels, moving)))

        if config.output_path:
            write_metrics_csv(rows, self.labels, config.output_path, config.wall_clock)
        if config.checkpoint_dir:
            for label, agent in zip(self.labels, self.agents):
                directory = Path(config.checkpoint_dir) / label
                directory.mkdir(parents=True, exist_ok=True)
                agent.save(directory)
        return rows


def run_experiment(config: ExperimentConfig) -> List[MetricsRow]:
    """Build the engine for `config` and run it to completion"""
    return ExperimentEngine(config).run_experiment()


# ── Summaries ─────────────────────────────────────────────────────────────────
def steps_to_within(series: pd.Series, final: float, band: float = CONVERGENCE_BAND) -> int:
    """First step after which the series stays within `band` of `final`"""
    outside = np.abs(series.to_numpy() - final) > band * abs(final)
    if not outside.any():
        return 0
    return int(np.nonzero(outside)[0][-1] + 1)


def summarize_run(frame: pd.DataFrame, run: str = "") -> pd.DataFrame:
    """One record per agent column of a metrics CSV"""
    labels = [c[len("cost_"):] for c in frame.columns if c.startswith("cost_")]
    if not labels or frame.empty:
        raise ValueError(f"No agent columns in {run or 'metrics frame'}")
    records = []
    for label in labels:
        ma = frame[f"ma_{label}"]
        final = float(ma.iloc[-1])
        baseline = float(frame[f"baseline_{label}"].iloc[-1])
        reduction = 100.0 * (baseline - final) / baseline if baseline else 0.0
        records.append({
            "run": run,
            "agent": label,
            "kind": label.rsplit("_", 1)[0],
            "final_cost": final,
            "reduction_pct": reduction,
            "steps_to_5pct": steps_to_within(ma, final),
        })
    return pd.DataFrame(records)


def summarize(csv_paths: Sequence) -> pd.DataFrame:
    """
    Per agent kind: final moving-average cost, percent delay reduction and
    steps to settle within 5% of the final value, as mean and (population)
    standard deviation across all runs and agents of that kind.
    """
    if not csv_paths:
        raise ValueError("Nothing to summarize")
    runs = pd.concat([summarize_run(pd.read_csv(p), str(p)) for p in csv_paths],
                     ignore_index=True)
    grouped = runs.groupby("kind", sort=True)
    summary = pd.DataFrame({
        "runs": grouped.size(),
        "final_cost_mean": grouped["final_cost"].mean(),
        "final_cost_std": grouped["final_cost"].std(ddof=0),
        "reduction_pct_mean": grouped["reduction_pct"].mean(),
        "reduction_pct_std": grouped["reduction_pct"].std(ddof=0),
        "steps_to_5pct_mean": grouped["steps_to_5pct"].mean(),
        "steps_to_5pct_std": grouped["steps_to_5pct"].std(ddof=0),
    })
    return summary.reset_index()
