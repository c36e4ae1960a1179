from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pressim.bench import Uniform, generate_synthetic_demand
from pressim.network import build_grid
from pressim.pressure import RewardKind, StateKind, StateVector
from pressim.rl import (
    LearningAgent,
    QFunction,
    QLearnerConfig,
    QPolicyController,
    ReplayBuffer,
    TrainingDiverged,
    Transition,
    act,
    epsilon_for_episode,
    gradient_check,
    learn_step,
    load_policy,
    save_parameters,
    train,
)
from pressim.sim import ConfigurationError, SimConfig, Simulation


def sv(features, onehot=()) -> StateVector:
    return StateVector(
        intersection="x",
        kind=StateKind.NV,
        phase_onehot=tuple(float(v) for v in onehot),
        features=tuple(float(v) for v in features),
    )


def q_with_fixed_output(values) -> QFunction:
    """Linear model with zero weights: forward always returns the biases."""
    q = QFunction(2, len(values), (), np.random.default_rng(0))
    q.weights[0][...] = 0.0
    q.biases[0][...] = np.asarray(values, dtype=np.float64)
    return q


def test_config_validation():
    for kwargs in (
        {"gamma": 1.0},
        {"gamma": -0.1},
        {"learning_rate": 0.0},
        {"epsilon_start": 0.5, "epsilon_end": 0.6},
        {"epsilon_decay": 0.0},
        {"batch_size": 0},
        {"batch_size": 64, "buffer_capacity": 32},
        {"target_sync_interval": 0},
        {"episodes": 0},
        {"episodes": 5, "eval_episodes": 6},
    ):
        with pytest.raises(ConfigurationError):
            QLearnerConfig(**kwargs)


def test_act_greedy_and_tie_break():
    rng = np.random.default_rng(0)
    s = sv([1.0, 2.0])
    assert act(q_with_fixed_output([1, 5, 2, 0]), s, 0.0, rng) == 1
    assert act(q_with_fixed_output([2, 2, 1, 0]), s, 0.0, rng) == 0
    with pytest.raises(ConfigurationError):
        act(q_with_fixed_output([1, 2]), s, 1.5, rng)


def test_act_uniform_under_full_exploration():
    rng = np.random.default_rng(42)
    q = q_with_fixed_output([9, 0, 0, 0])  # greedy would always pick 0
    draws = 10_000
    counts = np.zeros(4)
    s = sv([0.0, 0.0])
    for _ in range(draws):
        counts[act(q, s, 1.0, rng)] += 1
    expected = draws / 4
    sigma = np.sqrt(draws * 0.25 * 0.75)
    assert np.all(np.abs(counts - expected) < 3 * sigma), counts


def test_learn_step_myopic_convergence():
    rng = np.random.default_rng(3)
    q = QFunction(4, 3, (16,), rng)
    target = q.clone()
    cfg = QLearnerConfig(gamma=0.0, learning_rate=1e-2, batch_size=1, buffer_capacity=8)
    t = Transition(sv([1, 0, 1, 0]), 1, 7.0, sv([0, 1, 0, 1]), False)
    for _ in range(2500):
        q, loss = learn_step(q, target, [t], cfg)
    assert q.forward(t.s.vector())[1] == pytest.approx(7.0, abs=1e-3)
    assert loss < 1e-6


def test_learn_step_terminal_excludes_bootstrap():
    rng = np.random.default_rng(5)
    q = QFunction(2, 2, (16,), rng)
    # target network promises a huge future value that must be ignored
    target = q_with_fixed_output([1000.0, 1000.0])
    cfg = QLearnerConfig(gamma=0.9, learning_rate=1e-2, batch_size=1, buffer_capacity=8)
    t = Transition(sv([1, 0]), 0, -4.0, sv([0, 1]), terminal=True)
    for _ in range(2500):
        q, _ = learn_step(q, target, [t], cfg)
    assert q.forward(t.s.vector())[0] == pytest.approx(-4.0, abs=1e-2)


def test_learn_step_rejects_empty_batch():
    q = q_with_fixed_output([0, 0])
    with pytest.raises(ConfigurationError):
        learn_step(q, q, [], QLearnerConfig())


def test_bellman_fixed_point_matches_value_iteration():
    transitions = [
        Transition(sv([1, 0]), 0, 1.0, sv([0, 1]), False),
        Transition(sv([1, 0]), 1, 0.0, sv([1, 0]), False),
        Transition(sv([0, 1]), 0, 2.0, sv([1, 0]), False),
        Transition(sv([0, 1]), 1, 0.0, sv([0, 1]), False),
    ]
    gamma = 0.9
    oracle = np.zeros((2, 2))
    for _ in range(500):
        v = oracle.max(axis=1)
        oracle = np.array(
            [[1 + gamma * v[1], gamma * v[0]], [2 + gamma * v[0], gamma * v[1]]]
        )
    cfg = QLearnerConfig(
        gamma=gamma,
        learning_rate=3e-3,
        batch_size=4,
        buffer_capacity=16,
        hidden_sizes=(16, 16),
        target_sync_interval=100,
    )
    q = QFunction(2, 2, cfg.hidden_sizes, np.random.default_rng(1))
    target = q.clone()
    for step in range(12_000):
        learn_step(q, target, transitions, cfg)
        if (step + 1) % cfg.target_sync_interval == 0:
            q.copy_into(target)
    learned = np.array([q.forward(sv([1, 0]).vector()), q.forward(sv([0, 1]).vector())])
    assert np.max(np.abs(learned - oracle) / np.abs(oracle)) < 0.05


def test_gradient_check_mlp_and_linear():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        q = QFunction(6, 4, (8, 8), rng)
        s = sv(rng.normal(size=6))
        a = int(rng.integers(4))
        target = float(rng.normal(scale=5))
        worst = max(worst, gradient_check(q, s, a, target))
    assert worst < 1e-4
    linear = QFunction(6, 4, (), rng)
    assert gradient_check(linear, sv(rng.normal(size=6)), 0, 2.0) < 1e-6


def test_gradient_check_is_deterministic():
    def one(seed):
        rng = np.random.default_rng(seed)
        q = QFunction(5, 3, (8,), rng)
        return gradient_check(q, sv(rng.normal(size=5)), 1, 0.5)

    assert one(7) == one(7)


def test_replay_buffer_eviction_and_sampling():
    buf = ReplayBuffer(5)
    items = [Transition(sv([i]), 0, float(i), sv([i]), False) for i in range(8)]
    for t in items:
        buf.push(t)
    assert len(buf) == 5
    stored_rewards = {t.r for t in buf.sample(5, np.random.default_rng(0))}
    assert stored_rewards == {3.0, 4.0, 5.0, 6.0, 7.0}  # oldest three evicted
    batch = buf.sample(4, np.random.default_rng(1))
    assert len({id(t) for t in batch}) == 4  # without replacement
    with pytest.raises(ConfigurationError):
        buf.sample(6, np.random.default_rng(2))
    with pytest.raises(ConfigurationError):
        ReplayBuffer(0)


@settings(max_examples=30, deadline=None)
@given(
    episodes=st.integers(1, 300),
    decay=st.floats(0.05, 1.0),
    end=st.floats(0.0, 0.3),
)
def test_epsilon_schedule_monotone_and_reaches_end(episodes, decay, end):
    cfg = QLearnerConfig(
        episodes=episodes,
        eval_episodes=0,
        epsilon_decay=decay,
        epsilon_end=end,
    )
    values = [epsilon_for_episode(cfg, ep) for ep in range(episodes + 1)]
    assert values[0] == cfg.epsilon_start
    for a, b in zip(values, values[1:]):
        assert b <= a + 1e-12
    assert values[-1] == pytest.approx(end, abs=1e-9)
    assert all(v >= end - 1e-12 for v in values)


def test_divergence_raises():
    rng = np.random.default_rng(0)
    q = QFunction(4, 2, (8, 8), rng)
    cfg = QLearnerConfig(learning_rate=1e100, batch_size=1, buffer_capacity=8)
    t = Transition(sv([1, 2, 3, 4]), 0, 1.0, sv([1, 2, 3, 4]), False)
    with pytest.raises(TrainingDiverged):
        for _ in range(10):
            learn_step(q, q.clone(), [t], cfg)


def test_train_divergence_carries_partial_reports():
    net = build_grid(1, 1, 400.0, 400.0)
    flows = generate_synthetic_demand(net, Uniform(1 / 10), seed=0, horizon_s=300.0)
    cfg = QLearnerConfig(
        learning_rate=1e100, episodes=3, eval_episodes=1, batch_size=4, seed=0
    )
    with pytest.raises(TrainingDiverged) as exc_info:
        train(net, flows, cfg, SimConfig(episode_length=300.0))
    assert isinstance(exc_info.value.reports, list)


def test_single_episode_full_exploration_populates_buffer():
    net = build_grid(1, 1, 400.0, 400.0)
    flows = generate_synthetic_demand(net, Uniform(1 / 10), seed=0, horizon_s=600.0)
    cfg = QLearnerConfig(
        episodes=1, eval_episodes=1, epsilon_start=1.0, epsilon_end=1.0, seed=0
    )
    agent, reports = train(net, flows, cfg, SimConfig(episode_length=600.0))
    assert len(reports) == 1
    assert len(agent.buffers["shared"]) > 10
    assert reports[0].decisions > 20


def test_training_is_seed_deterministic():
    net = build_grid(1, 1, 400.0, 400.0)
    flows = generate_synthetic_demand(net, Uniform(1 / 12), seed=0, horizon_s=400.0)

    def run(seed):
        cfg = QLearnerConfig(episodes=3, eval_episodes=1, batch_size=8, seed=seed)
        agent, reports = train(net, flows, cfg, SimConfig(episode_length=400.0))
        return (
            tuple(agent.episode_returns),
            tuple(r.average_travel_time for r in reports),
            agent.q.weights[0].tobytes(),
        )

    assert run(0) == run(0)
    assert run(0) != run(1)


def test_shared_vs_private_parameters():
    net = build_grid(2, 2, 300.0, 300.0)
    shared = LearningAgent(net, QLearnerConfig(shared_parameters=True))
    assert set(shared.q_functions) == {"shared"}
    assert shared.q is shared.q_functions["shared"]
    private = LearningAgent(net, QLearnerConfig(shared_parameters=False))
    assert set(private.q_functions) == {i.id for i in net.intersections}
    with pytest.raises(ConfigurationError):
        _ = private.q


def test_shared_parameters_require_homogeneous_intersections():
    import dataclasses

    from pressim.network import RoadNetwork

    net = build_grid(1, 2, 300.0, 300.0)
    first = net.intersections[0]
    chopped = dataclasses.replace(first, phases=first.phases[:2])
    uneven = RoadNetwork(
        [chopped, net.intersections[1]], net.roads, net.phase_scheme
    )
    with pytest.raises(ConfigurationError):
        LearningAgent(uneven, QLearnerConfig(shared_parameters=True))


def test_parameter_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    q = QFunction(12, 4, (32, 32), rng)
    restored = QFunction.from_doc(q.to_doc())
    probe = rng.normal(size=(5, 12))
    np.testing.assert_array_equal(q.forward(probe), restored.forward(probe))


def test_policy_save_load_and_frozen_determinism(tmp_path):
    net = build_grid(1, 1, 400.0, 400.0)
    flows = generate_synthetic_demand(net, Uniform(1 / 12), seed=0, horizon_s=400.0)
    cfg = QLearnerConfig(episodes=2, eval_episodes=1, batch_size=8, seed=0)
    agent, _ = train(net, flows, cfg, SimConfig(episode_length=400.0))
    path = tmp_path / "params.json"
    save_parameters(agent, path)
    policy = load_policy(net, path)
    assert isinstance(policy, QPolicyController)

    def episode_digest():
        sim = Simulation(net, flows, SimConfig(episode_length=400.0))
        sim.run({i.id: policy for i in net.intersections})
        return sim.state_digest()

    assert episode_digest() == episode_digest()


def test_greedy_eval_sets_epsilon_zero_in_tail():
    net = build_grid(1, 1, 400.0, 400.0)
    flows = generate_synthetic_demand(net, Uniform(1 / 12), seed=0, horizon_s=300.0)
    cfg = QLearnerConfig(
        episodes=3, eval_episodes=1, batch_size=8, seed=0, greedy_eval=True
    )
    agent, reports = train(net, flows, cfg, SimConfig(episode_length=300.0))
    assert agent.epsilon == 0.0  # last episode ran greedy
    assert len(reports) == 3
