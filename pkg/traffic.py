"""
Black-Box Load Distribution - Traffic Generation
=================================================
Gravity-model traffic matrices, per-step Gaussian variation and
utilization-targeted scaling.
"""

import logging
from typing import List, Tuple, Iterable

import numpy as np

from models import GravityParams, TrafficMatrix, Topology, ScalingError
from netsim import router_for

logger = logging.getLogger(__name__)

DEFAULT_STD_FRACTION = 0.01


def step_rng(seed: int, t: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, step, stream); replays are bit-identical"""
    return np.random.default_rng([int(seed), int(t), int(stream)])


def gravity_mean_tm(params: GravityParams) -> TrafficMatrix:
    """demand[i][j] = p_in[i] * p_out[j], zero diagonal"""
    demand = np.outer(params.p_in, params.p_out)
    np.fill_diagonal(demand, 0.0)
    return TrafficMatrix(demand)


def sample_gravity_params(n: int, rate: float, seed: int,
                          std_fraction: float = DEFAULT_STD_FRACTION) -> GravityParams:
    """p_in and p_out drawn i.i.d. exponential with mean `rate`"""
    if n < 2:
        raise ValueError(f"Gravity model needs at least 2 nodes, got {n}")
    rng = np.random.default_rng(seed)
    return GravityParams(rng.exponential(rate, n), rng.exponential(rate, n), std_fraction)


def perturb_means(means: np.ndarray, std_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian around each mean with std = std_fraction * mean, truncated at 0"""
    means = np.asarray(means, dtype=float)
    return np.maximum(rng.normal(means, std_fraction * means), 0.0)


def perturb_tm(mean_params: GravityParams, seed: int, t: int) -> TrafficMatrix:
    """Redraw every p_in / p_out for step t, then take the gravity product"""
    rng = step_rng(seed, t)
    p_in = perturb_means(mean_params.p_in, mean_params.std_fraction, rng)
    p_out = perturb_means(mean_params.p_out, mean_params.std_fraction, rng)
    return gravity_mean_tm(GravityParams(p_in, p_out, mean_params.std_fraction))


def scale_params(params: GravityParams, factor: float) -> GravityParams:
    """Scaling p_in scales every gravity product by the same factor"""
    return GravityParams(params.p_in * factor, params.p_out.copy(), params.std_fraction)


def max_utilization(demands: Iterable[Tuple[int, int, float]], topology: Topology) -> float:
    loads = router_for(topology).accumulate(demands)
    return float(np.max(loads / topology.capacities())) if len(loads) else 0.0


def utilization_scale(demands: List[Tuple[int, int, float]], topology: Topology,
                      target: float) -> float:
    """Factor that brings the routed max link utilization to `target`"""
    if not target > 0:
        raise ScalingError(f"Utilization target must be positive, got {target}")
    current = max_utilization(demands, topology)
    if current <= 0:
        raise ScalingError("Cannot scale zero traffic to a utilization target")
    return target / current


def scale_to_utilization(tm: TrafficMatrix, topology: Topology,
                         target: float) -> Tuple[TrafficMatrix, float]:
    """Scale a matrix so its routed max link utilization equals `target`"""
    factor = utilization_scale(tm.triples(topology.nodes), topology, target)
    logger.debug("Scaling traffic by %.6g to reach utilization %.3f", factor, target)
    return tm.scaled(factor), factor


def gravity_series(params: GravityParams, seed: int, steps: int) -> List[TrafficMatrix]:
    """`steps` consecutive perturbed matrices, as replayed by perturb_tm"""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    return [perturb_tm(params, seed, t) for t in range(steps)]
