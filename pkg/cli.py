"""
Black-Box Load Distribution - Command Line
===========================================
    python cli.py run experiment.cfg [--seed 3]
    python cli.py gen-tm --nodes 20 --steps 1000 -o series.tm
    python cli.py summarize results/*.csv
    python cli.py validate experiment.cfg
    python cli.py plot results.csv

Exit codes: 0 success, 2 configuration, 3 routing / topology mutation,
4 parse / IO, 1 anything else.
"""

import sys
import argparse
import logging
from typing import List, Optional

from models import (
    ConfigError, RoutingError, MutationError, ParseError, ExperimentError, GravityParams
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ROUTING = 3
EXIT_IO = 4


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ExperimentError):
        return exit_code_for(error.cause)
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (RoutingError, MutationError)):
        return EXIT_ROUTING
    if isinstance(error, (ParseError, OSError)):
        return EXIT_IO
    return EXIT_FAILURE


# ── Subcommands ───────────────────────────────────────────────────────────────
def cmd_run(args) -> int:
    from config import load_config
    from experiment_engine import ExperimentEngine

    config = load_config(args.config, seed=args.seed)
    if args.output:
        config.output_path = args.output
    rows = ExperimentEngine(config).run_experiment()
    print(f"✅ {len(rows)} steps written to {config.output_path}")
    return EXIT_OK


def cmd_gen_tm(args) -> int:
    from file_parser import parse_topology_file, write_tm_series
    from traffic import sample_gravity_params, gravity_series, gravity_mean_tm, scale_to_utilization

    seed = args.seed if args.seed is not None else 0
    topology = None
    if args.topology:
        topology = parse_topology_file(args.topology)
        n = len(topology.nodes)
    elif args.nodes:
        n = args.nodes
    else:
        raise ConfigError("gen-tm needs --nodes or --topology")
    params = sample_gravity_params(n, args.rate, seed, args.std_fraction)
    if args.utilization is not None:
        if topology is None:
            raise ConfigError("--utilization needs --topology")
        _, factor = scale_to_utilization(gravity_mean_tm(params), topology, args.utilization)
        params = GravityParams(params.p_in * factor, params.p_out, params.std_fraction)
    write_tm_series(args.output, gravity_series(params, seed, args.steps))
    print(f"✅ {args.steps} traffic matrices ({n} nodes) written to {args.output}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    from experiment_engine import summarize

    summary = summarize(args.csv)
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    if args.output:
        summary.to_csv(args.output, index=False)
        print(f"✅ Summary written to {args.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    """Dry run: builds exactly what `run` would build, without learning"""
    from config import load_config
    from experiment_engine import ExperimentEngine
    from netsim import is_connected

    config = load_config(args.config, seed=args.seed)
    print(f"✅ Config ok: {config.problem_kind.value}, {config.agents} agent(s), {config.steps} steps")
    engine = ExperimentEngine(config)
    topology = engine.network.topology
    if not is_connected(topology):
        raise ConfigError("Topology is not connected")
    print(f"✅ Topology ok: {len(topology.nodes)} nodes, {topology.num_links} links")
    print(f"✅ Roles ok: action dimensions {[p.space.dim for p in engine.problems]}")
    print(f"✅ Traffic ok: scale factor {engine.traffic.factor:.4g}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from viz_module import export_run_html

    out = export_run_html(args.csv, args.output)
    print(f"✅ Plot written to {out}")
    return EXIT_OK


# ── Parser ────────────────────────────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cli.py",
        description="Tomography-based load distribution experiments over a simulated black-box network",
    )
    parser.add_argument("--seed", type=int, default=None, help="override run.seed / CORL_SEED")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="override output.path")
    run.set_defaults(func=cmd_run)

    gen = sub.add_parser("gen-tm", help="write a gravity traffic matrix series")
    gen.add_argument("--nodes", type=int)
    gen.add_argument("--topology", help="topology file (node count and utilization scaling)")
    gen.add_argument("--steps", type=int, default=1000)
    gen.add_argument("--rate", type=float, default=1.0)
    gen.add_argument("--std-fraction", type=float, default=0.01)
    gen.add_argument("--utilization", type=float)
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(func=cmd_gen_tm)

    summ = sub.add_parser("summarize", help="aggregate metrics CSVs per agent kind")
    summ.add_argument("csv", nargs="+")
    summ.add_argument("-o", "--output")
    summ.set_defaults(func=cmd_summarize)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    plot = sub.add_parser("plot", help="export cost / reduction curves as HTML")
    plot.add_argument("csv")
    plot.add_argument("-o", "--output")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:
        code = exit_code_for(e)
        logger.error("❌ %s", e)
        logger.debug("Traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
