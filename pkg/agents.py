"""
Black-Box Load Distribution - Agents
=====================================
Replay buffer, critic-only learners (softmax and Frank-Wolfe action
search), the DDPG baseline, the equal-split heuristic and the
full-information Frank-Wolfe oracle.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models import (
    AgentKind, BlockSimplexSpace, SplitAction, Transition, FwConfig, TrafficMatrix
)
from neural import Mlp, AdamState, TargetPair, adam_step, soft_update, save_checkpoint
from fw import (
    fw_solve, random_feasible_values, softmax_values, softmax_backward,
    uniform_values, block_sums
)

logger = logging.getLogger(__name__)

# finite-difference noise floor of the oracle gradient
ORACLE_GRADIENT_FLOOR = 1e-9

# critics regress log(cost); costs are clipped here first
COST_FLOOR = 1e-12
# half-width of the initial critic output layer
CRITIC_OUTPUT_SCALE = 3e-3


def _sub_seeds(seed: Optional[int], count: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def log_costs(costs: np.ndarray) -> np.ndarray:
    """Critic regression targets"""
    return np.log(np.maximum(np.asarray(costs, dtype=float), COST_FLOOR))


# ── Replay buffer ─────────────────────────────────────────────────────────────
class ReplayBuffer:
    """Most recent `capacity` transitions, sampled uniformly with replacement"""

    def __init__(self, capacity: int = 1000, seed=None):
        if capacity < 1:
            raise ValueError(f"Buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if not transition.action.is_feasible():
            raise ValueError("Refusing to store an infeasible action")
        self._items.append(transition)

    def sample(self, m: int) -> List[Transition]:
        if m < 0:
            raise ValueError(f"Sample size must be >= 0, got {m}")
        if m == 0:
            return []
        if not self._items:
            raise ValueError("Cannot sample from an empty buffer")
        return [self._items[i] for i in self.rng.integers(0, len(self._items), m)]

    def as_batch(self, transitions: Sequence[Transition]) -> Tuple[np.ndarray, np.ndarray]:
        """[state | action] rows and their costs"""
        X = np.array([np.concatenate([t.state, t.action.values]) for t in transitions])
        c = np.array([t.cost for t in transitions], dtype=float)
        return X, c


def buffer_push(buffer: ReplayBuffer, transition: Transition) -> None:
    buffer.push(transition)


def buffer_sample(buffer: ReplayBuffer, m: int) -> List[Transition]:
    return buffer.sample(m)


# ── Agent protocol ────────────────────────────────────────────────────────────
@dataclass
class DecisionContext:
    """
    Simulation-side view handed to agents at decision time. Learning agents
    ignore everything but the state; the oracle reads the true network.
    """
    tm_step: Optional[TrafficMatrix] = None
    network: Optional[object] = None                    # env.BlackBoxNetwork
    problems: Sequence = field(default_factory=list)
    previous_actions: Sequence[SplitAction] = field(default_factory=list)
    agent_index: int = 0


class Agent:
    """Common surface: act on a state, learn from the resulting transition"""
    kind: AgentKind

    def __init__(self, space: BlockSimplexSpace, state_dim: int):
        self.space = space
        self.state_dim = state_dim

    def act(self, state: np.ndarray, context: Optional[DecisionContext] = None) -> SplitAction:
        raise NotImplementedError

    def learn(self, transition: Transition) -> Optional[float]:
        return None

    def save(self, directory) -> None:
        """Learning agents write their networks; heuristics have nothing to save"""


def equal_split(space: BlockSimplexSpace) -> SplitAction:
    """Every block uniform"""
    return SplitAction(uniform_values(space), space)


class EqualSplitAgent(Agent):
    kind = AgentKind.EQUAL_SPLIT

    def act(self, state, context=None) -> SplitAction:
        return equal_split(self.space)


# ── Critic-only learners ──────────────────────────────────────────────────────
class CorlAgent(Agent):
    """
    A single critic Q(s, a) predicts the log of the mean delay; actions come
    from minimizing the target critic over the block-simplex product. A
    refined action replaces the best candidate only if the target critic
    scores it no worse.

    variant "softmax": best of N random logit vectors, then K Adam steps in
    logit space through the per-block softmax.
    variant "fw": best of N uniform simplex samples, then Frank-Wolfe on the
    critic's action gradient (no projection involved).
    """

    OPT_ITERS = {"softmax": 100, "fw": 10}

    def __init__(
        self,
        space: BlockSimplexSpace,
        state_dim: int,
        variant: str = "fw",
        hidden: Sequence[int] = (256, 256),
        n_candidates: int = 1000,
        opt_iters: Optional[int] = None,
        action_lr: float = 0.05,
        net_lr: float = 0.001,
        minibatch: int = 32,
        buffer_size: int = 1000,
        tau: float = 0.001,
        fw_tolerance: float = 1e-5,
        seed: Optional[int] = None,
    ):
        super().__init__(space, state_dim)
        if variant not in self.OPT_ITERS:
            raise ValueError(f"Unknown CORL variant: {variant}")
        if opt_iters is None:
            opt_iters = self.OPT_ITERS[variant]
        for name, value in (("n_candidates", n_candidates), ("opt_iters", opt_iters),
                            ("minibatch", minibatch)):
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if not (action_lr > 0 and net_lr > 0):
            raise ValueError("Learning rates must be positive")
        self.kind = AgentKind.CORL if variant == "softmax" else AgentKind.CORL_FW
        self.variant = variant
        self.n_candidates = n_candidates
        self.opt_iters = opt_iters
        self.action_lr = action_lr
        self.minibatch = minibatch
        self.fw_config = FwConfig(max_iters=opt_iters, distance_tolerance=fw_tolerance)

        critic_seed, action_seed, buffer_seed = _sub_seeds(seed, 3)
        layers = [state_dim + space.dim, *hidden, 1]
        self.critic = TargetPair(Mlp(layers, seed=critic_seed, output_scale=CRITIC_OUTPUT_SCALE), tau)
        self.optimizer = AdamState(lr=net_lr)
        self.rng = np.random.default_rng(action_seed)
        self.buffer = ReplayBuffer(buffer_size, np.random.default_rng(buffer_seed))
        self.action_slice = slice(state_dim, state_dim + space.dim)
        self.steps = 0

    def _inputs(self, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_2d(actions)
        states = np.broadcast_to(np.asarray(state, dtype=float), (actions.shape[0], self.state_dim))
        return np.hstack([states, actions])

    def _scores(self, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Target critic outputs (log cost) for a batch of actions"""
        return self.critic.target.forward_batch(self._inputs(state, actions))[:, 0]

    def predict_costs(self, X: np.ndarray, target: bool = False) -> np.ndarray:
        """Predicted costs for [state | action] rows"""
        net = self.critic.target if target else self.critic.live
        return np.exp(net.forward_batch(X)[:, 0])

    def predict(self, state: np.ndarray, action: SplitAction, target: bool = True) -> float:
        return float(self.predict_costs(self._inputs(state, action.values), target)[0])

    def action_gradient(self, state: np.ndarray, values: np.ndarray) -> np.ndarray:
        """d(log Q')/da at (state, values); same descent directions as dQ'/da"""
        return self.critic.target.grad_input(self._inputs(state, values)[0], self.action_slice)

    def _best_candidate(self, state: np.ndarray, candidates: np.ndarray) -> int:
        return int(np.argmin(self._scores(state, candidates)))

    def _keep_better(self, state: np.ndarray, start: np.ndarray, refined: np.ndarray) -> SplitAction:
        """Refined split unless the target critic rates the start lower"""
        scores = self._scores(state, np.vstack([start, refined]))
        chosen = refined if scores[1] <= scores[0] else start
        return SplitAction(chosen, self.space)

    def select_action(self, state: np.ndarray) -> SplitAction:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.state_dim,):
            raise ValueError(f"Expected state of length {self.state_dim}, got {state.shape}")
        if self.variant == "softmax":
            return self._select_softmax(state)
        return self._select_fw(state)

    def _select_softmax(self, state: np.ndarray) -> SplitAction:
        logits = self.rng.normal(size=(self.n_candidates, self.space.dim))
        candidates = softmax_values(logits, self.space)
        best = self._best_candidate(state, candidates)
        v = logits[best].copy()
        optimizer = AdamState(lr=self.action_lr)
        for _ in range(self.opt_iters):
            a = softmax_values(v, self.space)
            grad = softmax_backward(a, self.action_gradient(state, a), self.space)
            adam_step(optimizer, [v], [grad])
        return self._keep_better(state, candidates[best], softmax_values(v, self.space))

    def _select_fw(self, state: np.ndarray) -> SplitAction:
        candidates = random_feasible_values(self.space, self.rng, self.n_candidates)
        start = candidates[self._best_candidate(state, candidates)]
        refined = fw_solve(lambda x: self.action_gradient(state, x), self.space,
                           self.fw_config, SplitAction(start, self.space))
        return self._keep_better(state, start, refined.values)

    def act(self, state, context=None) -> SplitAction:
        return self.select_action(state)

    def learn(self, transition: Transition) -> float:
        """Store, fit the live critic on one minibatch, track it with the target"""
        self.buffer.push(transition)
        X, c = self.buffer.as_batch(self.buffer.sample(self.minibatch))
        loss, grads = self.critic.live.grad_params(X, log_costs(c))
        adam_step(self.optimizer, self.critic.live.params(), grads)
        soft_update(self.critic)
        self.steps += 1
        logger.debug("%s step %d critic loss %.6g", self.kind.value, self.steps, loss)
        return loss

    def save(self, directory) -> None:
        save_checkpoint(f"{directory}/critic.npz", self.critic.live,
                        {"kind": self.kind.value, "steps": self.steps,
                         "state_dim": self.state_dim, "block_sizes": list(self.space.block_sizes)})
        save_checkpoint(f"{directory}/critic_target.npz", self.critic.target,
                        {"kind": self.kind.value, "steps": self.steps})


# ── DDPG baseline ─────────────────────────────────────────────────────────────
class DdpgAgent(Agent):
    """
    Actor maps state to logits, the per-block softmax makes them a split.
    The critic regresses the log of the observed mean delay (no
    bootstrapping, the problem is myopic) and the actor descends the
    critic through the softmax.
    """
    kind = AgentKind.DDPG

    def __init__(
        self,
        space: BlockSimplexSpace,
        state_dim: int,
        hidden: Sequence[int] = (256, 256),
        actor_hidden: Optional[Sequence[int]] = None,
        net_lr: float = 0.001,
        actor_lr: float = 0.0001,
        minibatch: int = 32,
        buffer_size: int = 1000,
        tau: float = 0.001,
        noise: float = 0.1,
        noise_decay: float = 0.999,
        seed: Optional[int] = None,
    ):
        super().__init__(space, state_dim)
        if noise < 0 or not 0 < noise_decay <= 1:
            raise ValueError("Invalid exploration noise settings")
        actor_seed, critic_seed, noise_seed, buffer_seed = _sub_seeds(seed, 4)
        actor_layers = [state_dim, *(actor_hidden or hidden), space.dim]
        self.actor = TargetPair(Mlp(actor_layers, seed=actor_seed), tau)
        critic_layers = [state_dim + space.dim, *hidden, 1]
        self.critic = TargetPair(Mlp(critic_layers, seed=critic_seed, output_scale=CRITIC_OUTPUT_SCALE), tau)
        self.actor_optimizer = AdamState(lr=actor_lr)
        self.critic_optimizer = AdamState(lr=net_lr)
        self.noise = noise
        self.noise_decay = noise_decay
        self.rng = np.random.default_rng(noise_seed)
        self.buffer = ReplayBuffer(buffer_size, np.random.default_rng(buffer_seed))
        self.minibatch = minibatch
        self.action_slice = slice(state_dim, state_dim + space.dim)
        self.steps = 0

    def act(self, state, context=None) -> SplitAction:
        logits = self.actor.live.forward_batch(np.asarray(state, dtype=float).reshape(1, -1))[0]
        if self.noise > 0:
            logits = logits + self.rng.normal(0.0, self.noise, self.space.dim)
        self.noise *= self.noise_decay
        return SplitAction(softmax_values(logits, self.space), self.space)

    def critic_step(self, X: np.ndarray, costs: np.ndarray) -> float:
        loss, grads = self.critic.live.grad_params(X, log_costs(costs))
        adam_step(self.critic_optimizer, self.critic.live.params(), grads)
        return loss

    def actor_step(self, states: np.ndarray) -> float:
        """Move the actor down the critic's mean predicted log cost; returns that mean"""
        logits = self.actor.live.forward_batch(states)
        actions = softmax_values(logits, self.space)
        inputs = np.hstack([states, actions])
        dq_da = self.critic.live.grad_input_batch(inputs, self.action_slice)
        d_logits = softmax_backward(actions, dq_da, self.space) / len(states)
        actor_grads, _ = self.actor.live.backward(states, d_logits)
        adam_step(self.actor_optimizer, self.actor.live.params(), actor_grads)
        return float(self.critic.live.forward_batch(inputs).mean())

    def learn(self, transition: Transition) -> float:
        self.buffer.push(transition)
        X, c = self.buffer.as_batch(self.buffer.sample(self.minibatch))
        loss = self.critic_step(X, c)
        self.actor_step(X[:, :self.state_dim])
        soft_update(self.critic)
        soft_update(self.actor)
        self.steps += 1
        logger.debug("ddpg step %d critic loss %.6g", self.steps, loss)
        return loss

    def save(self, directory) -> None:
        meta = {"kind": self.kind.value, "steps": self.steps, "noise": self.noise}
        save_checkpoint(f"{directory}/actor.npz", self.actor.live, meta)
        save_checkpoint(f"{directory}/critic.npz", self.critic.live, meta)


# ── Full-information oracle ───────────────────────────────────────────────────
def finite_difference_gradient(cost_fn, x: np.ndarray, space: BlockSimplexSpace,
                               h: float = 1e-4) -> np.ndarray:
    """
    Central differences of a batched objective, projected onto the
    tangent space of each block (block mean removed).
    """
    dim = len(x)
    steps = h * np.eye(dim)
    values = cost_fn(np.vstack([x + steps, x - steps]))
    grad = (values[:dim] - values[dim:]) / (2.0 * h)
    means = block_sums(grad, space) / np.array(space.block_sizes, dtype=float)
    return grad - np.repeat(means, space.block_sizes)


def fw_oracle_action(
    problem,
    tm_step: TrafficMatrix,
    config: Optional[FwConfig] = None,
    network=None,
    problems: Optional[Sequence] = None,
    actions: Optional[Sequence[SplitAction]] = None,
    agent: int = 0,
    smoothed: bool = False,
    h: float = 1e-4,
) -> SplitAction:
    """
    Frank-Wolfe on the true mean delay with every other agent frozen at
    `actions`. Starts from the equal split; gradients are finite differences
    of the network's full-information objective.
    """
    if network is None:
        raise ValueError("The oracle needs the simulated network")
    config = config or FwConfig()
    config = FwConfig(config.max_iters, config.distance_tolerance,
                      max(config.zero_gradient_tolerance, ORACLE_GRADIENT_FLOOR))
    problems = list(problems) if problems is not None else [problem]
    if actions is None:
        actions = [equal_split(p.space) for p in problems]
    cost_fn = network.cost_function(problems, actions, agent, tm_step, smoothed=smoothed)
    space = problem.space
    return fw_solve(lambda x: finite_difference_gradient(cost_fn, x, space, h),
                    space, config, equal_split(space))


class FwOracleAgent(Agent):
    """Best response to the other agents' previous actions with full visibility"""
    kind = AgentKind.FW_ORACLE

    def __init__(self, space: BlockSimplexSpace, state_dim: int,
                 config: Optional[FwConfig] = None, smoothed: bool = False):
        super().__init__(space, state_dim)
        self.config = config or FwConfig()
        self.smoothed = smoothed

    def act(self, state, context: Optional[DecisionContext] = None) -> SplitAction:
        if context is None or context.network is None:
            raise ValueError("fw-oracle needs a decision context with the network")
        problem = context.problems[context.agent_index]
        return fw_oracle_action(problem, context.tm_step, self.config, context.network,
                                context.problems, context.previous_actions or None,
                                context.agent_index, self.smoothed)


def make_agent(kind: AgentKind, problem, seed: Optional[int] = None, **options) -> Agent:
    """Agent of the requested kind sized for `problem`"""
    space, state_dim = problem.space, problem.state_dim
    if kind == AgentKind.EQUAL_SPLIT:
        return EqualSplitAgent(space, state_dim)
    if kind == AgentKind.FW_ORACLE:
        return FwOracleAgent(space, state_dim, options.get("fw_config"),
                             options.get("smoothed", False))
    if kind in (AgentKind.CORL, AgentKind.CORL_FW):
        keys = ("hidden", "n_candidates", "opt_iters", "action_lr", "net_lr",
                "minibatch", "buffer_size", "tau")
        kwargs = {k: options[k] for k in keys if options.get(k) is not None}
        variant = "softmax" if kind == AgentKind.CORL else "fw"
        return CorlAgent(space, state_dim, variant=variant, seed=seed, **kwargs)
    if kind == AgentKind.DDPG:
        keys = ("hidden", "net_lr", "actor_lr", "minibatch", "buffer_size", "tau", "noise")
        kwargs = {k: options[k] for k in keys if options.get(k) is not None}
        return DdpgAgent(space, state_dim, seed=seed, **kwargs)
    raise ValueError(f"Unknown agent kind: {kind}")
