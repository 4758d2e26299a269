"""
Black-Box Load Distribution - Neural Networks
==============================================
Small fully-connected networks written directly on numpy: forward and
backward passes, input gradients, Adam, soft target updates and
parameter checkpoints.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Optional, Sequence, Union, Dict

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

InputSlice = Union[slice, Tuple[int, int]]


class Mlp:
    """
    Feed-forward network: rectified hidden layers, identity output.
    Weights are stored (fan_in, fan_out) so a batch X (B x in) maps to X @ W + b.
    Every layer starts uniform in +-1/sqrt(fan_in); `output_scale` narrows
    the output layer to +-output_scale so a fresh network is nearly flat.
    """

    def __init__(self, layer_sizes: Sequence[int], seed: Optional[int] = None,
                 output_scale: Optional[float] = None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"Invalid layer sizes: {layer_sizes}")
        if output_scale is not None and not output_scale > 0:
            raise ValueError(f"output_scale must be positive, got {output_scale}")
        self.layer_sizes = tuple(sizes)
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if i == last and output_scale is not None:
                bound = output_scale
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> List[np.ndarray]:
        """Parameter arrays in the order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = self.layer_sizes
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def same_architecture(self, other: "Mlp") -> bool:
        return self.layer_sizes == other.layer_sizes

    # ── forward ──────────────────────────────────────────────────────────────
    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"Expected input of length {self.input_dim}, got {X.shape[1]}")
        return X

    def _forward_cache(self, X: np.ndarray) -> List[np.ndarray]:
        """Layer inputs; the last entry is the network output"""
        activations = [X]
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            activations.append(h)
        return activations

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        """B x out outputs for a B x in batch"""
        return self._forward_cache(self._check_input(X))[-1]

    def forward(self, x: np.ndarray) -> Union[float, np.ndarray]:
        """Scalar for single-output networks, vector otherwise"""
        out = self.forward_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]
        return float(out[0]) if self.output_dim == 1 else out

    # ── backward ─────────────────────────────────────────────────────────────
    def backward(self, X: np.ndarray, d_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Backpropagate d(loss)/d(output) (B x out).
        Returns parameter gradients in params() order and d(loss)/dX.
        """
        X = self._check_input(X)
        activations = self._forward_cache(X)
        delta = np.asarray(d_out, dtype=float).reshape(X.shape[0], self.output_dim)
        grads: List[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = activations[i]
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                # subgradient 0 at the kink
                delta = delta * (activations[i] > 0)
        return grads, delta

    def grad_params(self, X: np.ndarray, targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Mean squared error over the batch and its exact parameter gradient"""
        X = self._check_input(X)
        targets = np.asarray(targets, dtype=float).reshape(X.shape[0], self.output_dim)
        if X.shape[0] == 0:
            raise ValueError("Empty batch")
        error = self.forward_batch(X) - targets
        loss = float(np.mean(np.sum(error * error, axis=1)))
        grads, _ = self.backward(X, 2.0 * error / X.shape[0])
        return loss, grads

    def grad_input_batch(self, X: np.ndarray, input_slice: Optional[InputSlice] = None) -> np.ndarray:
        """Gradient of each row's scalar output with respect to its inputs"""
        if self.output_dim != 1:
            raise ValueError("Input gradients need a single-output network")
        X = self._check_input(X)
        _, d_x = self.backward(X, np.ones((X.shape[0], 1)))
        return d_x[:, self._resolve_slice(input_slice)]

    def grad_input(self, x: np.ndarray, input_slice: Optional[InputSlice] = None) -> np.ndarray:
        return self.grad_input_batch(np.asarray(x, dtype=float).reshape(1, -1), input_slice)[0]

    def _resolve_slice(self, input_slice: Optional[InputSlice]) -> slice:
        if input_slice is None:
            return slice(0, self.input_dim)
        if isinstance(input_slice, tuple):
            input_slice = slice(*input_slice)
        start = 0 if input_slice.start is None else input_slice.start
        stop = self.input_dim if input_slice.stop is None else input_slice.stop
        if input_slice.step not in (None, 1) or not 0 <= start < stop <= self.input_dim:
            raise ValueError(f"Invalid input slice {input_slice} for input length {self.input_dim}")
        return slice(start, stop)


# ── Optimizer ─────────────────────────────────────────────────────────────────
@dataclass
class AdamState:
    """Adam moment estimates for one list of parameter arrays"""
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")

    def reset(self):
        self.step = 0
        self.m = []
        self.v = []


def adam_step(state: AdamState, params: List[np.ndarray], grads: List[np.ndarray]) -> List[np.ndarray]:
    """One bias-corrected Adam update, applied to `params` in place"""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"Gradient shape {np.shape(g)} does not match parameter {p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif [m.shape for m in state.m] != [p.shape for p in params]:
        raise ValueError("Adam state was created for differently shaped parameters")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params


# ── Target networks ───────────────────────────────────────────────────────────
class TargetPair:
    """Live network plus a slowly tracking target copy"""

    def __init__(self, live: Mlp, tau: float = 0.001, target: Optional[Mlp] = None):
        if not 0 <= tau <= 1:
            raise ValueError(f"tau must be in [0, 1], got {tau}")
        self.live = live
        self.target = target if target is not None else live.copy()
        if not self.live.same_architecture(self.target):
            raise ValueError("Live and target networks differ in architecture")
        self.tau = tau

    def soft_update(self) -> Mlp:
        return soft_update(self)


def soft_update(pair: TargetPair) -> Mlp:
    """target <- tau * live + (1 - tau) * target"""
    if not pair.live.same_architecture(pair.target):
        raise ValueError("Live and target networks differ in architecture")
    tau = pair.tau
    for t, l in zip(pair.target.params(), pair.live.params()):
        t *= (1.0 - tau)
        t += tau * l
    return pair.target


# ── Checkpoints ───────────────────────────────────────────────────────────────
def save_checkpoint(path, net: Mlp, metadata: Optional[Dict] = None) -> Path:
    """
    .npz dump: format version, layer sizes, W0, b0, W1, b1, ... and a
    JSON metadata record. Loading gives back bit-identical parameters.
    """
    path = Path(path)
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "layer_sizes": np.array(net.layer_sizes, dtype=np.int64),
        "metadata": np.array(json.dumps(metadata or {}, sort_keys=True)),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.info("💾 Saved network %s to %s", net.layer_sizes, path)
    return path


def load_checkpoint(path) -> Tuple[Mlp, Dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"Unsupported checkpoint version {version}")
        sizes = [int(s) for s in data["layer_sizes"]]
        net = Mlp(sizes, seed=0)
        net.weights = [data[f"W{i}"].astype(float) for i in range(len(sizes) - 1)]
        net.biases = [data[f"b{i}"].astype(float) for i in range(len(sizes) - 1)]
        metadata = json.loads(str(data["metadata"]))
    return net, metadata
