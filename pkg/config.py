"""
Black-Box Load Distribution - Experiment Configuration
=======================================================
One flat `key=value` file per run, dotted keys, read with python-dotenv.
CORL_SEED and CORL_OUTPUT in the environment override the file; the CLI
--seed flag overrides both.
"""

import os
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values

from models import ProblemKind, AgentKind, ConfigError, FwConfig

logger = logging.getLogger(__name__)

ENV_SEED = "CORL_SEED"
ENV_OUTPUT = "CORL_OUTPUT"


@dataclass
class ExperimentConfig:
    """Everything one run needs; kind-dependent defaults are left as None"""
    # topology
    topology_path: Optional[str] = None
    coordinates_path: Optional[str] = None
    generate_nodes: int = 20
    generate_degree: int = 4
    generate_rewire: float = 0.2
    directed: bool = False

    # problem geometry
    problem_kind: ProblemKind = ProblemKind.EGRESS
    agents: int = 1
    egresses: int = 4
    prefixes: Union[int, str] = 8          # "all" = every non-egress node
    sources: int = 4
    destinations: int = 16
    middles: int = 12
    egress_nodes: Optional[List[int]] = None
    destination_nodes: Optional[List[int]] = None
    source_nodes: Optional[List[int]] = None
    middle_nodes: Optional[List[int]] = None

    # traffic
    traffic_rate: float = 1.0
    std_fraction: float = 0.01
    utilization: Optional[float] = None
    agent_share: float = 0.3
    tm_series: Optional[str] = None

    # agents
    agent_kinds: List[AgentKind] = field(default_factory=lambda: [AgentKind.CORL_FW])
    n_candidates: int = 1000
    opt_iters: Optional[int] = None
    action_lr: float = 0.05
    net_lr: float = 0.001
    minibatch: int = 32
    buffer_size: int = 1000
    tau: float = 0.001
    hidden: Optional[List[int]] = None
    noise: float = 0.1

    # oracle
    oracle_max_iters: int = 100
    oracle_tolerance: float = 1e-5
    oracle_smoothed: Optional[bool] = None

    # run
    steps: int = 1000
    seed: int = 0
    debug: bool = False
    failure_steps: List[int] = field(default_factory=list)
    failure_every: Optional[int] = None

    # output
    output_path: str = "results.csv"
    wall_clock: bool = False
    checkpoint_dir: Optional[str] = None

    # ── resolved values ──────────────────────────────────────────────────────
    @property
    def utilization_target(self) -> float:
        if self.utilization is not None:
            return self.utilization
        return 0.9 if self.problem_kind == ProblemKind.EGRESS else 1.05

    @property
    def hidden_layers(self) -> Tuple[int, ...]:
        if self.hidden:
            return tuple(self.hidden)
        return (256, 256) if self.problem_kind == ProblemKind.EGRESS else (512, 256)

    @property
    def smoothed_oracle(self) -> bool:
        if self.oracle_smoothed is not None:
            return self.oracle_smoothed
        return self.problem_kind == ProblemKind.SEGMENT

    @property
    def fw_config(self) -> FwConfig:
        return FwConfig(max_iters=self.oracle_max_iters, distance_tolerance=self.oracle_tolerance)

    def kind_of(self, agent: int) -> AgentKind:
        """A single configured kind applies to every agent"""
        if len(self.agent_kinds) == 1:
            return self.agent_kinds[0]
        return self.agent_kinds[agent]

    def agent_options(self) -> Dict:
        return {
            "hidden": self.hidden_layers,
            "n_candidates": self.n_candidates,
            "opt_iters": self.opt_iters,
            "action_lr": self.action_lr,
            "net_lr": self.net_lr,
            "minibatch": self.minibatch,
            "buffer_size": self.buffer_size,
            "tau": self.tau,
            "noise": self.noise,
            "fw_config": self.fw_config,
            "smoothed": self.smoothed_oracle,
        }

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


# ── Parsing ───────────────────────────────────────────────────────────────────
def _int(value: str) -> int:
    return int(value)


def _float(value: str) -> float:
    return float(value)


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _int_list(value: str) -> List[int]:
    return [int(v) for v in value.replace(" ", "").split(",") if v]


def _optional_path(value: str) -> Optional[str]:
    return value or None


def _prefixes(value: str) -> Union[int, str]:
    return "all" if value.strip().lower() == "all" else int(value)


def _agent_kinds(value: str) -> List[AgentKind]:
    return [AgentKind(v.strip()) for v in value.split(",") if v.strip()]


# config key -> (field name, converter)
SCHEMA = {
    "topology.path": ("topology_path", _optional_path),
    "topology.coordinates": ("coordinates_path", _optional_path),
    "topology.generate.nodes": ("generate_nodes", _int),
    "topology.generate.degree": ("generate_degree", _int),
    "topology.generate.rewire": ("generate_rewire", _float),
    "topology.directed": ("directed", _bool),
    "problem.kind": ("problem_kind", ProblemKind),
    "problem.agents": ("agents", _int),
    "problem.egresses": ("egresses", _int),
    "problem.prefixes": ("prefixes", _prefixes),
    "problem.sources": ("sources", _int),
    "problem.destinations": ("destinations", _int),
    "problem.middles": ("middles", _int),
    "problem.egress_nodes": ("egress_nodes", _int_list),
    "problem.destination_nodes": ("destination_nodes", _int_list),
    "problem.source_nodes": ("source_nodes", _int_list),
    "problem.middle_nodes": ("middle_nodes", _int_list),
    "traffic.rate": ("traffic_rate", _float),
    "traffic.std_fraction": ("std_fraction", _float),
    "traffic.utilization": ("utilization", _float),
    "traffic.agent_share": ("agent_share", _float),
    "traffic.series": ("tm_series", _optional_path),
    "agent.kind": ("agent_kinds", _agent_kinds),
    "agent.n_candidates": ("n_candidates", _int),
    "agent.opt_iters": ("opt_iters", _int),
    "agent.action_lr": ("action_lr", _float),
    "agent.net_lr": ("net_lr", _float),
    "agent.minibatch": ("minibatch", _int),
    "agent.buffer": ("buffer_size", _int),
    "agent.tau": ("tau", _float),
    "agent.hidden": ("hidden", _int_list),
    "agent.noise": ("noise", _float),
    "oracle.max_iters": ("oracle_max_iters", _int),
    "oracle.tolerance": ("oracle_tolerance", _float),
    "oracle.smoothed": ("oracle_smoothed", _bool),
    "run.steps": ("steps", _int),
    "run.seed": ("seed", _int),
    "run.debug": ("debug", _bool),
    "failure.steps": ("failure_steps", _int_list),
    "failure.every": ("failure_every", _int),
    "output.path": ("output_path", str),
    "output.wall_clock": ("wall_clock", _bool),
    "output.checkpoint_dir": ("checkpoint_dir", _optional_path),
}


def config_from_dict(values: Dict[str, Optional[str]], base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Build a config from raw key/value strings; unknown keys are rejected"""
    kwargs = {}
    for key, raw in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"Unknown config key: {key}")
        name, convert = SCHEMA[key]
        try:
            kwargs[name] = convert("" if raw is None else str(raw).strip())
        except ValueError as e:
            raise ConfigError(f"Bad value for {key}: {raw!r} ({e})") from e
    config = ExperimentConfig(**kwargs)
    if base_dir is not None:
        # relative paths in a config file are relative to the file
        for name in ("topology_path", "coordinates_path", "tm_series"):
            value = getattr(config, name)
            if value and not Path(value).is_absolute():
                setattr(config, name, str(base_dir / value))
    return config


def load_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    """Read a config file and apply environment and CLI overrides"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    config = config_from_dict(dict(dotenv_values(path)), base_dir=path.parent)
    if os.getenv(ENV_SEED):
        try:
            config.seed = int(os.getenv(ENV_SEED))
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} must be an integer") from e
    if os.getenv(ENV_OUTPUT):
        config.output_path = os.getenv(ENV_OUTPUT)
    if seed is not None:
        config.seed = int(seed)
    check = validate_config(config)
    if not check[0]:
        raise ConfigError(check[1])
    logger.debug("Loaded config %s (seed %d)", path, config.seed)
    return config


def validate_config(config: ExperimentConfig) -> Tuple[bool, str]:
    """Static checks that need no topology; returns (ok, message)"""
    if config.steps < 1:
        return False, f"run.steps must be >= 1, got {config.steps}"
    if config.agents < 1:
        return False, f"problem.agents must be >= 1, got {config.agents}"
    if len(config.agent_kinds) not in (1, config.agents):
        return False, (f"agent.kind lists {len(config.agent_kinds)} kinds "
                       f"for {config.agents} agents")
    if config.problem_kind == ProblemKind.EGRESS:
        if config.egresses < 1:
            return False, "problem.egresses must be >= 1"
        if config.prefixes != "all" and config.prefixes < 1:
            return False, "problem.prefixes must be >= 1 or 'all'"
    else:
        if config.sources < 1 or config.destinations < 1 or config.middles < 0:
            return False, "segment routing needs sources, destinations and a non-negative middle count"
    if not 0 < config.agent_share:
        return False, "traffic.agent_share must be positive"
    if config.utilization is not None and not config.utilization > 0:
        return False, "traffic.utilization must be positive"
    if not 0 <= config.std_fraction < 1:
        return False, "traffic.std_fraction must be in [0, 1)"
    if config.failure_every is not None and config.failure_every < 1:
        return False, "failure.every must be >= 1"
    if any(s < 0 for s in config.failure_steps):
        return False, "failure.steps must be non-negative"
    if config.topology_path is None and config.generate_nodes < 3:
        return False, "generated topologies need at least 3 nodes"
    for name in ("topology_path", "coordinates_path", "tm_series"):
        value = getattr(config, name)
        if value and not Path(value).is_file():
            return False, f"{name.replace('_', ' ')} not found: {value}"
    if config.tau < 0 or config.tau > 1:
        return False, "agent.tau must be in [0, 1]"
    return True, "ok"
