"""Desk-scale end-to-end runs; minutes each, so they only run with `-m slow`"""

import numpy as np
import pytest

from conftest import make_topology
from models import AgentKind, ProblemKind, TrafficMatrix
from config import ExperimentConfig
from file_parser import write_topology_file, write_tm_series
from netsim import is_connected
from experiment_engine import ExperimentEngine

pytestmark = pytest.mark.slow

SLACK = 1.05
ORACLE_GAP = 1.25
ORDER = (AgentKind.FW_ORACLE, AgentKind.CORL_FW, AgentKind.CORL, AgentKind.EQUAL_SPLIT)


def egress_config(tmp_path, kind, seed, **overrides):
    values = dict(
        generate_nodes=20, egresses=4, prefixes=8, utilization=0.9,
        agent_kinds=[kind], steps=1000, seed=seed,
        output_path=str(tmp_path / f"{kind.value}_{seed}.csv"),
    )
    values.update(overrides)
    return ExperimentConfig(**values)


def final_cost(config):
    rows = ExperimentEngine(config).run_experiment()
    return rows[-1].moving_averages[0]


def test_egress_ordering_over_seeds(tmp_path):
    wins = 0
    seeds = range(5)
    for seed in seeds:
        costs = [final_cost(egress_config(tmp_path, kind, seed)) for kind in ORDER]
        ordered = all(a <= SLACK * b for a, b in zip(costs, costs[1:]))
        if ordered and costs[1] <= ORACLE_GAP * costs[0]:
            wins += 1
    assert wins > len(seeds) / 2


def test_segmentation_avoids_the_saturated_link(tmp_path):
    # triangle 0-1-2 with a chain 2-3; the direct link 0->1 gets 1.05x its capacity
    topo = tmp_path / "triangle_chain.topo"
    write_topology_file(make_topology([(0, 1), (1, 2), (0, 2), (2, 3)]), topo)
    demand = np.zeros((4, 4))
    demand[0, 1] = 10.5
    series = tmp_path / "saturating.tm"
    write_tm_series(series, [TrafficMatrix(demand)])

    def config(kind):
        return ExperimentConfig(
            topology_path=str(topo), tm_series=str(series),
            problem_kind=ProblemKind.SEGMENT, source_nodes=[0], destination_nodes=[1],
            middle_nodes=[2, 3], agent_kinds=[kind], steps=1000, seed=0,
            output_path=str(tmp_path / f"{kind.value}.csv"),
        )

    learned = final_cost(config(AgentKind.CORL_FW))
    oracle = final_cost(config(AgentKind.FW_ORACLE))
    all_direct = 1.0 + 0.001
    assert learned < all_direct
    assert learned <= ORACLE_GAP * oracle


def test_distributed_agents_lower_the_system_cost(tmp_path):
    def run(kind):
        config = egress_config(tmp_path, kind, 0, agents=2, egresses=4, prefixes=8, debug=True,
                               output_path=str(tmp_path / f"two_{kind.value}.csv"))
        return ExperimentEngine(config).run_experiment()

    learned = run(AgentKind.CORL_FW)
    start = run(AgentKind.EQUAL_SPLIT)[0].system_cost
    assert np.mean([r.system_cost for r in learned[-100:]]) < start


def test_learner_recovers_after_a_link_failure(tmp_path):
    config = egress_config(tmp_path, AgentKind.CORL_FW, 0, failure_steps=[500], debug=True)
    engine = ExperimentEngine(config)
    rows = engine.run_experiment()
    averages = [r.moving_averages[0] for r in rows]
    network = engine.network
    assert is_connected(network.topology)
    assert len(network.dropped_links) == 2
    assert network.routes_avoid(network.dropped_links)
    assert averages[999] < max(averages[500:600])
