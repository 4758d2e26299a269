import numpy as np
import pandas as pd
import pytest

from conftest import make_topology
from models import (
    AgentKind, ProblemKind, TrafficMatrix, Prefix, EgressProblem, ConfigError,
    ExperimentError, MutationError
)
from config import ExperimentConfig
from env import BlackBoxNetwork
from agents import equal_split
from traffic import max_utilization
from file_parser import write_topology_file
from netsim import generate_topology
from experiment_engine import (
    ExperimentEngine, TrafficSource, build_problem, build_traffic, normalized,
    run_experiment, summarize, steps_to_within, system_cost
)


def small_config(tmp_path, **overrides):
    values = dict(
        generate_nodes=10,
        egresses=2,
        prefixes=3,
        agent_kinds=[AgentKind.CORL_FW],
        n_candidates=20,
        hidden=[8],
        minibatch=4,
        steps=5,
        seed=11,
        output_path=str(tmp_path / "run.csv"),
    )
    values.update(overrides)
    return ExperimentConfig(**values)


# ── roles ─────────────────────────────────────────────────────────────────────
def test_egress_roles_are_disjoint_between_agents():
    config = ExperimentConfig(agents=3, egresses=2, prefixes=4)
    topology = generate_topology(12, seed=0)
    problems = build_problem(config, topology, np.random.default_rng(0))
    egress_sets = [set(p.egresses) for p in problems]
    assert sum(len(s) for s in egress_sets) == len(set().union(*egress_sets)) == 6
    destinations = [tuple(pr.destination for pr in p.prefixes) for p in problems]
    assert len(set(destinations)) == 1
    ids = [pr.prefix_id for p in problems for pr in p.prefixes]
    assert sorted(ids) == list(range(12))


def test_all_prefixes_uses_every_free_node():
    config = ExperimentConfig(egresses=3, prefixes="all")
    problem = build_problem(config, generate_topology(9, seed=1), np.random.default_rng(0))[0]
    assert len(problem.prefixes) == 6


def test_segment_middles_include_the_agents_sources():
    config = ExperimentConfig(problem_kind=ProblemKind.SEGMENT, agents=2, sources=2,
                              destinations=3, middles=2)
    problems = build_problem(config, generate_topology(12, seed=2), np.random.default_rng(5))
    assert not set(problems[0].sources) & set(problems[1].sources)
    for p in problems:
        assert set(p.sources) <= set(p.middles)
        assert len(p.middles) == 4
        assert not set(p.sources) & set(p.destinations)


def test_too_many_roles_is_a_config_error():
    config = ExperimentConfig(agents=2, egresses=4, prefixes=4)
    with pytest.raises(ConfigError):
        build_problem(config, generate_topology(10, seed=0), np.random.default_rng(0))


def test_explicit_egresses_must_split_evenly():
    config = ExperimentConfig(agents=2, egress_nodes=[1, 2, 3])
    with pytest.raises(ConfigError):
        build_problem(config, generate_topology(10, seed=0), np.random.default_rng(0))


# ── traffic ───────────────────────────────────────────────────────────────────
def test_traffic_is_scaled_to_the_target(line_topology):
    network = BlackBoxNetwork(line_topology)
    problem = EgressProblem((Prefix(0, 2),), (0, 1))
    source = build_traffic(ExperimentConfig(utilization=0.5), network, [problem], seed=3)
    triples = network.demand_triples([problem], [equal_split(problem.space)], source.mean())
    assert max_utilization(triples, line_topology) == pytest.approx(0.5)


def test_series_prefix_demand_comes_from_egress_rows(line_topology):
    problem = EgressProblem((Prefix(0, 2),), (0, 1))
    demand = np.zeros((3, 3))
    demand[0, 2], demand[1, 2], demand[0, 1] = 3.0, 1.0, 5.0
    source = TrafficSource(0, series=[TrafficMatrix(demand)], problems=[problem],
                           position=line_topology.node_position())
    tm = source.step(4)
    assert tm.prefix_demand.tolist() == [4.0]
    assert tm.demand[0, 2] == 0.0 and tm.demand[1, 2] == 0.0
    assert tm.demand[0, 1] == 5.0


def test_traffic_steps_replay():
    config = ExperimentConfig(generate_nodes=10, egresses=2, prefixes=3, seed=4)
    a, b = ExperimentEngine(config), ExperimentEngine(config)
    np.testing.assert_array_equal(a.traffic.step(7).demand, b.traffic.step(7).demand)
    np.testing.assert_array_equal(a.traffic.step(7).prefix_demand, b.traffic.step(7).prefix_demand)


def test_normalization_is_the_peak_mean_demand(star_topology):
    problem = EgressProblem((Prefix(0, 0), Prefix(1, 0)), (1, 2))
    mean = TrafficMatrix(np.zeros((3, 3)), [2.0, 6.0])
    (scaled,) = normalized([problem], BlackBoxNetwork(star_topology), mean)
    assert scaled.normalization == 6.0
    (idle,) = normalized([problem], BlackBoxNetwork(star_topology),
                         TrafficMatrix(np.zeros((3, 3)), [0.0, 0.0]))
    assert idle.normalization == 1.0


# ── runs ──────────────────────────────────────────────────────────────────────
def test_same_seed_gives_identical_csv(tmp_path):
    first = small_config(tmp_path, output_path=str(tmp_path / "a.csv"))
    second = small_config(tmp_path, output_path=str(tmp_path / "b.csv"))
    run_experiment(first)
    run_experiment(second)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_different_seed_changes_the_run(tmp_path):
    run_experiment(small_config(tmp_path, output_path=str(tmp_path / "a.csv")))
    run_experiment(small_config(tmp_path, seed=12, output_path=str(tmp_path / "b.csv")))
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()


def test_four_agent_columns(tmp_path):
    kinds = [AgentKind.EQUAL_SPLIT, AgentKind.CORL, AgentKind.CORL_FW, AgentKind.DDPG]
    config = small_config(tmp_path, generate_nodes=14, agents=4, agent_kinds=kinds,
                          opt_iters=5, steps=3)
    rows = ExperimentEngine(config).run_experiment()
    frame = pd.read_csv(config.output_path)
    labels = ["equal-split_0", "corl_1", "corl-fw_2", "ddpg_3"]
    expected = ["step"] + [f"{p}_{l}" for p in ("cost", "ma", "reduction", "baseline")
                           for l in labels] + ["system_cost"]
    assert list(frame.columns) == expected
    assert frame["step"].tolist() == [0, 1, 2]
    assert all(np.isfinite(r.system_cost) for r in rows)


def test_moving_average_and_wall_clock(tmp_path):
    config = small_config(tmp_path, agent_kinds=[AgentKind.EQUAL_SPLIT], wall_clock=True)
    rows = ExperimentEngine(config).run_experiment()
    costs = [r.costs[0] for r in rows]
    assert rows[-1].moving_averages[0] == pytest.approx(np.mean(costs))
    assert rows[0].reductions[0] == 0.0
    assert "wall_clock" in pd.read_csv(config.output_path).columns


def test_failures_with_debug_invariants(tmp_path):
    config = small_config(tmp_path, problem_kind=ProblemKind.SEGMENT, generate_nodes=12,
                          sources=2, destinations=3, middles=2,
                          agent_kinds=[AgentKind.FW_ORACLE], oracle_max_iters=3,
                          failure_steps=[2], steps=4, debug=True)
    engine = ExperimentEngine(config)
    links_before = engine.network.topology.num_links
    rows = engine.run_experiment()
    assert len(rows) == 4
    assert len(engine.network.dropped_links) == 2
    assert engine.network.topology.num_links == links_before - 2
    assert engine.network.routes_avoid(engine.network.dropped_links)


def test_each_failure_drops_one_link_from_the_original(tmp_path):
    config = small_config(tmp_path, agent_kinds=[AgentKind.EQUAL_SPLIT],
                          failure_steps=[2, 4], steps=6, debug=True)
    engine = ExperimentEngine(config)
    original = engine.network.topology
    seen = []
    inject = engine.inject_failure

    def record(t):
        inject(t)
        seen.append((t, engine.network.dropped_links, engine.network.topology.num_links))

    engine.inject_failure = record
    engine.run_experiment()
    assert [t for t, _, _ in seen] == [2, 4]
    for _, dropped, num_links in seen:
        assert len(dropped) == 2
        (a, b), (c, d) = dropped
        assert (a, b) == (d, c)
        assert num_links == original.num_links - 2
    assert engine.network.original_topology is original


def test_failure_on_a_tree_aborts_with_the_step(tmp_path):
    path = tmp_path / "line.topo"
    write_topology_file(make_topology([(0, 1), (1, 2), (2, 3), (3, 4)]), path)
    config = small_config(tmp_path, topology_path=str(path), egresses=1, prefixes=2,
                          agent_kinds=[AgentKind.EQUAL_SPLIT], failure_steps=[1])
    with pytest.raises(ExperimentError) as err:
        run_experiment(config)
    assert err.value.step == 1
    assert isinstance(err.value.cause, MutationError)


def test_checkpoints_are_written(tmp_path):
    config = small_config(tmp_path, steps=2, checkpoint_dir=str(tmp_path / "ckpt"))
    run_experiment(config)
    assert (tmp_path / "ckpt" / "corl-fw_0" / "critic.npz").exists()


# ── summaries ─────────────────────────────────────────────────────────────────
def _write_run(path, ma, baseline):
    pd.DataFrame({
        "step": list(range(len(ma))),
        "cost_corl-fw_0": ma,
        "ma_corl-fw_0": ma,
        "reduction_corl-fw_0": [0.0] * len(ma),
        "baseline_corl-fw_0": [baseline] * len(ma),
        "system_cost": ma,
    }).to_csv(path, index=False)
    return path


def test_summary_of_two_runs(tmp_path):
    paths = [_write_run(tmp_path / "a.csv", [0.02, 0.01], 0.02),
             _write_run(tmp_path / "b.csv", [0.03, 0.03], 0.04)]
    summary = summarize(paths)
    assert summary["kind"].tolist() == ["corl-fw"]
    row = summary.iloc[0]
    assert row["runs"] == 2
    assert row["final_cost_mean"] == pytest.approx(0.02)
    assert row["final_cost_std"] == pytest.approx(0.01)
    assert row["reduction_pct_mean"] == pytest.approx((50.0 + 25.0) / 2)
    assert row["steps_to_5pct_mean"] == pytest.approx(0.5)


def test_summary_needs_input():
    with pytest.raises(ValueError):
        summarize([])


def test_steps_to_within_band():
    assert steps_to_within(pd.Series([1.0, 0.5, 0.52, 0.5]), 0.5) == 1
    assert steps_to_within(pd.Series([0.5, 0.5]), 0.5) == 0


def test_system_cost_weighting():
    assert system_cost([1.0, 3.0], [3.0, 1.0]) == pytest.approx(1.5)
    assert system_cost([1.0, 3.0], [0.0, 0.0]) == pytest.approx(2.0)
