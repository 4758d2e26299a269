"""
Black-Box Load Distribution - Frank-Wolfe over Simplex Products
================================================================
Linear minimization oracle, fixed 2/(k+2) steps and the full solver,
plus the two ways agents produce feasible splits without projection:
random simplex sampling and per-block softmax.
"""

import logging
from typing import Callable, List, Optional

import numpy as np

from models import BlockSimplexSpace, SplitAction, FwConfig

logger = logging.getLogger(__name__)

GradientFn = Callable[[np.ndarray], np.ndarray]
IterateCallback = Callable[[int, np.ndarray], None]


def _check_dim(vector: np.ndarray, space: BlockSimplexSpace, what: str) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.shape[-1] != space.dim:
        raise ValueError(f"{what} has length {vector.shape[-1]}, space dimension is {space.dim}")
    return vector


def block_sums(values: np.ndarray, space: BlockSimplexSpace) -> np.ndarray:
    """Per-block sums along the last axis"""
    return np.add.reduceat(values, space.offsets, axis=-1)


def uniform_values(space: BlockSimplexSpace) -> np.ndarray:
    return 1.0 / np.repeat(np.array(space.block_sizes, dtype=float), space.block_sizes)


# ── Linear minimization ───────────────────────────────────────────────────────
def lp_vertex_values(gradient: np.ndarray, space: BlockSimplexSpace) -> np.ndarray:
    gradient = _check_dim(gradient, space, "Gradient")
    vertex = np.zeros(space.dim)
    for sl in space.blocks():
        # argmin returns the first minimum: ties go to the lowest index
        vertex[sl.start + int(np.argmin(gradient[sl]))] = 1.0
    return vertex


def lp_vertex(gradient: np.ndarray, space: BlockSimplexSpace) -> SplitAction:
    """Vertex of the simplex product minimizing <z, gradient>"""
    return SplitAction(lp_vertex_values(gradient, space), space)


def step_size(k: int) -> float:
    return 2.0 / (k + 2.0)


def fw_step(current: SplitAction, vertex: SplitAction, k: int) -> SplitAction:
    """(1 - g) * current + g * vertex with g = 2/(k+2)"""
    if current.space != vertex.space:
        raise ValueError("Frank-Wolfe step between different action spaces")
    if k < 0:
        raise ValueError(f"Iteration index must be >= 0, got {k}")
    gamma = step_size(k)
    return SplitAction((1.0 - gamma) * current.values + gamma * vertex.values, current.space)


def fw_solve(
    gradient_fn: GradientFn,
    space: BlockSimplexSpace,
    config: Optional[FwConfig] = None,
    start: Optional[SplitAction] = None,
    callback: Optional[IterateCallback] = None,
) -> SplitAction:
    """
    Frank-Wolfe with the fixed 2/(k+2) schedule. Stops after max_iters,
    when the LP vertex is within distance_tolerance of the iterate, or when
    the gradient vanishes. Every iterate is a convex combination of feasible
    points, so no projection is ever needed.
    """
    config = config or FwConfig()
    x = uniform_values(space) if start is None else _check_dim(start.values, space, "Start").copy()
    if callback:
        callback(0, x)
    for k in range(config.max_iters):
        gradient = _check_dim(gradient_fn(x), space, "Gradient")
        if np.max(np.abs(gradient)) < config.zero_gradient_tolerance:
            logger.debug("FW stop at iteration %d: zero gradient", k)
            break
        vertex = lp_vertex_values(gradient, space)
        if np.linalg.norm(vertex - x) < config.distance_tolerance:
            logger.debug("FW stop at iteration %d: vertex reached", k)
            break
        gamma = step_size(k)
        x = (1.0 - gamma) * x + gamma * vertex
        if callback:
            callback(k + 1, x)
    return SplitAction(x, space)


# ── Feasible point generators ─────────────────────────────────────────────────
def random_feasible_values(space: BlockSimplexSpace, rng: np.random.Generator,
                           count: int) -> np.ndarray:
    """count x dim matrix, each block uniform on its simplex"""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    draws = rng.exponential(1.0, (count, space.dim))
    totals = block_sums(draws, space)
    return draws / np.repeat(totals, space.block_sizes, axis=-1)


def random_feasible(space: BlockSimplexSpace, seed, count: int) -> List[SplitAction]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [SplitAction(row, space) for row in random_feasible_values(space, rng, count)]


def softmax_values(logits: np.ndarray, space: BlockSimplexSpace) -> np.ndarray:
    """Per-block softmax along the last axis; works on batches"""
    logits = _check_dim(logits, space, "Logits")
    block_max = np.maximum.reduceat(logits, space.offsets, axis=-1)
    shifted = logits - np.repeat(block_max, space.block_sizes, axis=-1)
    # strictly positive even when a logit gap underflows exp
    e = np.maximum(np.exp(shifted), 1e-300)
    return e / np.repeat(block_sums(e, space), space.block_sizes, axis=-1)


def softmax_blocks(logits: np.ndarray, space: BlockSimplexSpace) -> SplitAction:
    return SplitAction(softmax_values(logits, space), space)


def softmax_backward(probs: np.ndarray, grad: np.ndarray, space: BlockSimplexSpace) -> np.ndarray:
    """Chain a gradient w.r.t. softmax outputs back to the logits"""
    inner = block_sums(probs * grad, space)
    return probs * (grad - np.repeat(inner, space.block_sizes, axis=-1))
