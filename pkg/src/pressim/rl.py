"""Episodic Q-learning over intersection observations, from first principles.

One template covers every instantiation: the observation kind and reward
kind are config fields, so a queue-count agent and an efficient-pressure
agent differ only in configuration. The function approximator is a small
fully-connected network written directly in numpy, with its own backward
pass, a finite-difference gradient check, and an adaptive-moment update.

Training embeds the agent as a signal controller: at each decision instant
it observes, finalizes the previous step's transition with the reward
measured now, takes one gradient step on a replay batch, and picks the next
phase epsilon-greedily. All randomness flows from one seeded generator, so
a fixed seed reproduces training bit for bit.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pressim.bench import RunReport, report_from_sim
from pressim.control import Controller, ControllerConfig
from pressim.network import RoadNetwork
from pressim.pressure import (
    RewardKind,
    StateKind,
    StateVector,
    extract_state,
    reward,
)
from pressim.sim import ConfigurationError, FlowSpec, SimConfig, Simulation, SimState


class TrainingDiverged(RuntimeError):
    """Raised when the TD loss stops being finite; carries partial reports."""

    def __init__(self, message: str, reports: Optional[list] = None):
        super().__init__(message)
        self.reports = reports or []


@dataclass(frozen=True)
class QLearnerConfig:
    gamma: float = 0.9
    learning_rate: float = 1e-2
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay: float = 0.8  # fraction of episodes spent annealing
    buffer_capacity: int = 10_000
    batch_size: int = 64
    hidden_sizes: tuple[int, ...] = (32, 32)
    target_sync_interval: int = 500  # decisions between target refreshes
    episodes: int = 200
    eval_episodes: int = 10  # last-N episodes averaged for the headline metric
    state_kind: StateKind = StateKind.EFFICIENT_PRESSURE
    reward_kind: RewardKind = RewardKind.NEG_INTERSECTION_PRESSURE
    shared_parameters: bool = True
    greedy_eval: bool = False  # epsilon 0 instead of epsilon_end in the last N
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ConfigurationError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0 < self.epsilon_decay <= 1:
            raise ConfigurationError("epsilon_decay must be in (0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ConfigurationError("need 1 <= batch_size <= buffer_capacity")
        if self.target_sync_interval < 1:
            raise ConfigurationError("target_sync_interval must be at least 1")
        if self.episodes < 1:
            raise ConfigurationError("episodes must be at least 1")
        if not 0 <= self.eval_episodes <= self.episodes:
            raise ConfigurationError("eval_episodes must fit within episodes")


@dataclass(frozen=True)
class Transition:
    s: StateVector
    a: int
    r: float
    s_next: StateVector
    terminal: bool


class QFunction:
    """Fully-connected net mapping an observation vector to per-phase values.

    Rectified-linear hidden layers; an empty ``hidden_sizes`` gives a plain
    linear model. Inputs are scaled by a fixed factor so raw queue counts
    land in a friendly range. The forward pass is pure; adaptive-moment
    optimizer state lives alongside the parameters.
    """

    INPUT_SCALE = 0.1

    def __init__(
        self,
        input_size: int,
        output_size: int,
        hidden_sizes: Sequence[int],
        rng: np.random.Generator,
    ):
        self.input_size = input_size
        self.output_size = output_size
        self.hidden_sizes = tuple(hidden_sizes)
        sizes = [input_size, *hidden_sizes, output_size]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            scale = np.sqrt(2.0 / n_in)
            if i == len(sizes) - 2:
                scale *= 0.01  # start near-zero action values
            self.weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))
        self._adam_m = [np.zeros_like(w) for w in self._params()]
        self._adam_v = [np.zeros_like(w) for w in self._params()]
        self._adam_t = 0

    def _params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def forward(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64)) * self.INPUT_SCALE
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        out = h @ self.weights[-1] + self.biases[-1]
        return out[0] if single else out

    def _forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64)) * self.INPUT_SCALE
        activations = [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            activations.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, activations

    def td_gradients(
        self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray], float]:
        """Gradients of mean squared TD error over a batch; also the loss."""
        out, acts = self._forward_cached(states)
        n = len(states)
        idx = np.arange(n)
        diff = out[idx, actions] - targets
        loss = float(np.mean(diff**2))
        delta = np.zeros_like(out)
        delta[idx, actions] = 2.0 * diff / n
        grads_w = [np.zeros_like(w) for w in self.weights]
        grads_b = [np.zeros_like(b) for b in self.biases]
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0.0)
        return grads_w, grads_b, loss

    def apply_gradients(
        self, grads_w: list[np.ndarray], grads_b: list[np.ndarray], learning_rate: float
    ) -> None:
        """One adaptive-moment (beta 0.9/0.999) update step."""
        self._adam_t += 1
        t = self._adam_t
        params = self._params()
        grads = [*grads_w, *grads_b]
        for p, g, m, v in zip(params, grads, self._adam_m, self._adam_v):
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
            m_hat = m / (1.0 - 0.9**t)
            v_hat = v / (1.0 - 0.999**t)
            p -= learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)

    def copy_into(self, other: "QFunction") -> None:
        for mine, theirs in zip(self._params(), other._params()):
            theirs[...] = mine

    def clone(self) -> "QFunction":
        other = QFunction(
            self.input_size,
            self.output_size,
            self.hidden_sizes,
            np.random.default_rng(0),
        )
        self.copy_into(other)
        return other

    def to_doc(self) -> dict:
        return {
            "input_size": self.input_size,
            "output_size": self.output_size,
            "hidden_sizes": list(self.hidden_sizes),
            "shapes": [list(p.shape) for p in self._params()],
            "values": [p.ravel().tolist() for p in self._params()],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "QFunction":
        q = cls(
            doc["input_size"],
            doc["output_size"],
            doc["hidden_sizes"],
            np.random.default_rng(0),
        )
        for p, shape, values in zip(q._params(), doc["shapes"], doc["values"]):
            p[...] = np.asarray(values, dtype=np.float64).reshape(shape)
        return q


def act(q: QFunction, s: StateVector, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy phase choice; greedy ties go to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise ConfigurationError("epsilon must be in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(q.output_size))
    values = q.forward(s.vector())
    return int(np.argmax(values))


def learn_step(
    q: QFunction,
    target_q: QFunction,
    batch: Sequence[Transition],
    config: QLearnerConfig,
) -> tuple[QFunction, float]:
    """One gradient step toward r + gamma * max target value (r alone at
    episode boundaries); returns the loss measured after the step."""
    if not batch:
        raise ConfigurationError("learn_step needs a non-empty batch")
    states = np.stack([t.s.vector() for t in batch])
    next_states = np.stack([t.s_next.vector() for t in batch])
    actions = np.array([t.a for t in batch], dtype=np.intp)
    rewards = np.array([t.r for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        bootstrap = target_q.forward(next_states).max(axis=1)
        targets = rewards + np.where(terminal, 0.0, config.gamma * bootstrap)
        grads_w, grads_b, _ = q.td_gradients(states, actions, targets)
        q.apply_gradients(grads_w, grads_b, config.learning_rate)
        out = q.forward(states)
        diff = out[np.arange(len(batch)), actions] - targets
        loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"TD loss became non-finite: {loss}")
    return q, loss


def gradient_check(
    q: QFunction, s: StateVector, a: int, target: float, step: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients
    of the squared TD error, measured per parameter tensor as
    ``|analytic - numeric| / (|analytic| + |numeric|)`` in the 2-norm."""
    x = s.vector()[None, :]
    actions = np.array([a], dtype=np.intp)
    targets = np.array([target], dtype=np.float64)
    grads_w, grads_b, _ = q.td_gradients(x, actions, targets)
    analytic = [*grads_w, *grads_b]

    def loss_now() -> float:
        out = q.forward(x)
        return float((out[0, a] - target) ** 2)

    worst = 0.0
    for p, g in zip(q._params(), analytic):
        numeric = np.zeros_like(g)
        flat_p = p.ravel()
        flat_n = numeric.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            up = loss_now()
            flat_p[i] = orig - step
            down = loss_now()
            flat_p[i] = orig
            flat_n[i] = (up - down) / (2.0 * step)
        denom = np.linalg.norm(g) + np.linalg.norm(numeric)
        if denom > 1e-12:
            worst = max(worst, float(np.linalg.norm(g - numeric) / denom))
    return worst


class ReplayBuffer:
    """Bounded transition store: oldest-first eviction, batch sampling
    without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("buffer capacity must be at least 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if n > len(self._items):
            raise ConfigurationError("cannot sample more transitions than stored")
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


def epsilon_for_episode(config: QLearnerConfig, episode: int) -> float:
    """Linear anneal from start to end over the first ``epsilon_decay``
    fraction of episodes, flat afterwards."""
    span = config.epsilon_decay * config.episodes
    progress = min(1.0, episode / span) if span > 0 else 1.0
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * progress


class LearningAgent(Controller):
    """The Q-learner wearing the controller interface.

    ``observe`` packages the current observation together with the reward
    measured at this instant; ``decide`` closes the previous transition with
    that reward, takes a learning step, and picks the next phase. With
    shared parameters every intersection reads and writes one network;
    otherwise each intersection owns a private one.
    """

    def __init__(
        self,
        net: RoadNetwork,
        config: QLearnerConfig,
        t_duration: float = 15.0,
    ):
        super().__init__(ControllerConfig(t_duration=t_duration))
        self.net = net
        self.qconfig = config
        self.rng = np.random.default_rng(config.seed)
        self.epsilon = config.epsilon_start
        self.learning = True
        first = net.intersections[0]
        n_phases = len(first.phases)
        n_features = len(first.signalized_movements)
        if config.shared_parameters:
            for inter in net.intersections:
                if (
                    len(inter.phases) != n_phases
                    or len(inter.signalized_movements) != n_features
                ):
                    raise ConfigurationError(
                        "shared parameters require homogeneous intersections"
                    )
        self._scopes = (
            ["shared"]
            if config.shared_parameters
            else [i.id for i in net.intersections]
        )
        input_size = n_features + n_phases
        self.q_functions: dict[str, QFunction] = {}
        self.target_functions: dict[str, QFunction] = {}
        self.buffers: dict[str, ReplayBuffer] = {}
        self.decision_counts: dict[str, int] = {}
        for scope in self._scopes:
            q = QFunction(input_size, n_phases, config.hidden_sizes, self.rng)
            self.q_functions[scope] = q
            self.target_functions[scope] = q.clone()
            self.buffers[scope] = ReplayBuffer(config.buffer_capacity)
            self.decision_counts[scope] = 0
        self._pending: dict[str, tuple[StateVector, int]] = {}
        self.losses: list[float] = []
        self.episode_returns: list[float] = []
        self._episode_return = 0.0

    @property
    def q(self) -> QFunction:
        if not self.qconfig.shared_parameters:
            raise ConfigurationError(
                "no single shared network; read q_functions per intersection"
            )
        return self.q_functions["shared"]

    def _scope(self, intersection: str) -> str:
        return "shared" if self.qconfig.shared_parameters else intersection

    # Controller interface ---------------------------------------------------

    def observe(self, state: SimState, net: RoadNetwork, intersection: str):
        sv = extract_state(state, net, intersection, self.qconfig.state_kind)
        r = reward(state, net, intersection, self.qconfig.reward_kind)
        return (sv, r)

    def decide(self, observation, intersection: str) -> int:
        sv, r = observation
        scope = self._scope(intersection)
        pending = self._pending.get(intersection)
        if pending is not None:
            prev_s, prev_a = pending
            self._record(scope, Transition(prev_s, prev_a, r, sv, terminal=False))
        action = act(self.q_functions[scope], sv, self.epsilon, self.rng)
        self._pending[intersection] = (sv, action)
        return action

    def begin_episode(self, sim: Simulation) -> None:
        self._pending.clear()
        self._episode_return = 0.0

    def end_episode(self, sim: Simulation) -> None:
        for intersection, (sv, action) in sorted(self._pending.items()):
            r = reward(sim.state, self.net, intersection, self.qconfig.reward_kind)
            scope = self._scope(intersection)
            self._record(scope, Transition(sv, action, r, sv, terminal=True))
        self._pending.clear()
        self.episode_returns.append(self._episode_return)

    # learning ---------------------------------------------------------------

    def _record(self, scope: str, t: Transition) -> None:
        self._episode_return += t.r
        self.buffers[scope].push(t)
        if not self.learning:
            return
        buf = self.buffers[scope]
        if len(buf) >= self.qconfig.batch_size:
            batch = buf.sample(self.qconfig.batch_size, self.rng)
            _, loss = learn_step(
                self.q_functions[scope],
                self.target_functions[scope],
                batch,
                self.qconfig,
            )
            self.losses.append(loss)
        self.decision_counts[scope] += 1
        if self.decision_counts[scope] % self.qconfig.target_sync_interval == 0:
            self.q_functions[scope].copy_into(self.target_functions[scope])


class QPolicyController(Controller):
    """Frozen greedy policy around trained parameters; deterministic, so it
    plugs in anywhere a classical controller does."""

    def __init__(
        self,
        net: RoadNetwork,
        q_functions: dict[str, QFunction],
        state_kind: StateKind,
        shared: bool = True,
        t_duration: float = 15.0,
    ):
        super().__init__(ControllerConfig(t_duration=t_duration))
        self.net = net
        self.q_functions = q_functions
        self.state_kind = state_kind
        self.shared = shared

    def observe(self, state: SimState, net: RoadNetwork, intersection: str):
        return extract_state(state, net, intersection, self.state_kind)

    def decide(self, observation: StateVector, intersection: str) -> int:
        scope = "shared" if self.shared else intersection
        values = self.q_functions[scope].forward(observation.vector())
        return int(np.argmax(values))


def train(
    net: RoadNetwork,
    flows: list[FlowSpec],
    config: QLearnerConfig,
    sim_config: Optional[SimConfig] = None,
    t_duration: float = 15.0,
) -> tuple[LearningAgent, list[RunReport]]:
    """Run the full episodic loop; returns the trained agent and one report
    per episode. A divergence aborts but carries the reports gathered so
    far on the raised error."""
    sim_config = sim_config or SimConfig()
    agent = LearningAgent(net, config, t_duration=t_duration)
    controllers = {i.id: agent for i in net.intersections}
    reports: list[RunReport] = []
    for episode in range(config.episodes):
        agent.epsilon = epsilon_for_episode(config, episode)
        if config.greedy_eval and episode >= config.episodes - config.eval_episodes:
            agent.epsilon = 0.0
        started = time.perf_counter()
        try:
            sim = Simulation(net, flows, sim_config)
            agent.begin_episode(sim)
            sim.run(controllers)
            agent.end_episode(sim)
        except TrainingDiverged as exc:
            raise TrainingDiverged(str(exc), reports) from None
        reports.append(
            report_from_sim(
                sim,
                scenario="train",
                controller="rl",
                seed=config.seed,
                episode=episode,
                wall_time=time.perf_counter() - started,
            )
        )
    return agent, reports


def evaluation_travel_time(reports: Sequence[RunReport], eval_episodes: int) -> float:
    """Headline metric: mean travel time over the last N episodes."""
    tail = list(reports)[-max(1, eval_episodes):]
    return float(np.mean([r.average_travel_time for r in tail]))


def save_parameters(agent: LearningAgent, path: str | Path) -> None:
    doc = {
        "state_kind": agent.qconfig.state_kind.value,
        "shared_parameters": agent.qconfig.shared_parameters,
        "t_duration": agent.t_duration,
        "scopes": {s: q.to_doc() for s, q in agent.q_functions.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_policy(net: RoadNetwork, path: str | Path) -> QPolicyController:
    doc = json.loads(Path(path).read_text())
    q_functions = {s: QFunction.from_doc(d) for s, d in doc["scopes"].items()}
    return QPolicyController(
        net,
        q_functions,
        StateKind(doc["state_kind"]),
        shared=doc["shared_parameters"],
        t_duration=doc["t_duration"],
    )
