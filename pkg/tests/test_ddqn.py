import numpy as np
import pytest

from flnet.config import default_config
from flnet.ddqn import (DDQNAgent, ReplayMemory, TrainerConfig, ddqn_target, epsilon_at,
                        run_training)
from flnet.env import FLNetEnv, decode_action
from flnet.neural import Mlp, clone_weights, forward, serialize


def two_head_nets():
    # One input, two outputs driven by biases only.
    online, target = Mlp((1, 2)), Mlp((1, 2))
    online.biases[0][:] = [0.0, 1.0]   # online picks action 1
    target.biases[0][:] = [5.0, 2.0]   # target's own max is action 0
    return online, target


def test_target_uses_online_argmax_and_target_value():
    online, target = two_head_nets()
    assert ddqn_target(1.0, np.zeros(1), online, target, 0.9) == pytest.approx(2.8)


def test_target_zero_discount_is_reward():
    online, target = two_head_nets()
    assert ddqn_target(0.37, np.zeros(1), online, target, 0.0) == 0.37


def test_target_identical_nets_is_max_target():
    net = Mlp((3, 5, 4), rng=np.random.default_rng(0))
    s = np.random.default_rng(1).normal(size=(6, 3))
    r = np.arange(6.0)
    expected = r + 0.9 * forward(net, s).max(axis=1)
    assert np.allclose(ddqn_target(r, s, net, clone_weights(net), 0.9), expected)


def test_epsilon_schedule():
    cfg = TrainerConfig(episodes=10, steps_per_episode=100)
    assert cfg.horizon == 800
    assert epsilon_at(0, cfg) == 0.9
    assert epsilon_at(400, cfg) == pytest.approx(0.45)
    assert epsilon_at(800, cfg) == 0.0
    assert epsilon_at(5000, cfg) == 0.0


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(discount=1.0)
    with pytest.raises(ValueError):
        TrainerConfig(target_sync=0)
    with pytest.raises(ValueError):
        TrainerConfig(batch_size=64, replay_capacity=32)


def test_replay_fifo_overwrite():
    mem = ReplayMemory(5, 1)
    for i in range(8):
        mem.push(np.array([i]), i, float(i), np.array([i + 1]))
    assert len(mem) == 5
    assert sorted(mem.actions.tolist()) == [3, 4, 5, 6, 7]
    assert mem.cursor == 3


def test_replay_sample_empty_raises():
    with pytest.raises(ValueError):
        ReplayMemory(3, 2).sample(1, np.random.default_rng(0))


def small_agent(**kw):
    cfg = default_config(1)
    tc = TrainerConfig(**{"seed": 7, "dtype": "float64", "hidden": (8, 8), **kw})
    return cfg, DDQNAgent(cfg, tc)


def fixed_batch():
    s = np.array([[0, 1, 1], [1, 2 / 3, 0], [0, 0, 1], [1, 1, 1]], float)
    a = np.array([9, 0, 15, 4])
    r = np.array([0.5, -0.25, 1.0, 0.0])
    sn = np.array([[1, 2 / 3, 1], [0, 1 / 3, 0], [0, 1, 1], [1, 0, 0]], float)
    return s, a, r, sn


def test_golden_batch_loss():
    # Frozen from a pure-Python forward pass of both nets on the same weights.
    _, agent = small_agent()
    perturb = np.random.default_rng(1)
    for p in agent.online.parameters():
        p += perturb.normal(0, 0.1, p.shape)
    assert agent.train_step(fixed_batch()) == pytest.approx(0.29122961845134443, rel=1e-12)


def test_train_step_zero_loss_when_targets_met():
    _, agent = small_agent(discount=0.0)
    s, a, _, sn = fixed_batch()
    r = forward(agent.online, s)[np.arange(4), a]
    before = [p.copy() for p in agent.online.parameters()]
    assert agent.train_step((s, a, r, sn)) == pytest.approx(0.0, abs=1e-24)
    # Rounding leaves ~1e-17 error, which Adam's normalization turns into eps-sized steps.
    assert all(np.allclose(p, b, rtol=0, atol=1e-7) for p, b in zip(agent.online.parameters(), before))


def test_train_step_regresses_onto_reward_when_undiscounted():
    _, agent = small_agent(discount=0.0, learning_rate=0.01)
    s, a, _, sn = fixed_batch()
    batch = (s[:1], a[:1], np.array([2.0]), sn[:1])
    losses = [agent.train_step(batch) for _ in range(300)]
    assert losses[-1] < 1e-3 * losses[0]


def test_train_step_rejects_empty_batch():
    _, agent = small_agent()
    with pytest.raises(ValueError):
        agent.train_step((np.zeros((0, 3)), np.zeros(0, int), np.zeros(0), np.zeros((0, 3))))


def test_zero_episodes_leaves_agent_untouched():
    cfg, agent = small_agent()
    before = serialize(agent.online)
    _, metrics = run_training(FLNetEnv(cfg, 0), TrainerConfig(episodes=0), agent)
    assert metrics == [] and serialize(agent.online) == before


def test_sync_every_iteration_keeps_nets_equal():
    cfg, agent = small_agent(target_sync=1, batch_size=4, episodes=1, steps_per_episode=30)
    env = FLNetEnv(cfg, 0)
    env.reset()
    probes = np.random.default_rng(0).random((5, 3))
    for _ in range(30):
        s = agent.features(env.state)
        a = agent.act(env.state, 0.5)
        out = env.step(decode_action(a, cfg))
        agent.observe(s, a, out.reward, agent.features(out.next_state))
        assert np.array_equal(forward(agent.online, probes), forward(agent.target, probes))


def test_target_only_changes_at_sync_boundaries():
    cfg, agent = small_agent(target_sync=10, batch_size=4)
    env = FLNetEnv(cfg, 1)
    env.reset()
    probe = np.array([0.0, 1.0, 1.0])
    prev = forward(agent.target, probe)
    changes = []
    for _ in range(40):
        s = agent.features(env.state)
        a = agent.act(env.state, 1.0)
        out = env.step(decode_action(a, cfg))
        agent.observe(s, a, out.reward, agent.features(out.next_state))
        cur = forward(agent.target, probe)
        if not np.array_equal(cur, prev):
            changes.append(agent.iteration)
        prev = cur
    assert changes and all(i % 10 == 0 for i in changes)


def degenerate_config():
    return default_config(1).replace(p_success_default=1.0, p_success_special=[1.0, 1.0],
                                     p_in_coverage=[1.0], p_energy_two=[0.0])


def test_training_is_deterministic():
    cfg = degenerate_config()
    tc = TrainerConfig(episodes=200, steps_per_episode=10, seed=3, hidden=(16, 16),
                       batch_size=16, target_sync=50)
    runs = [run_training(FLNetEnv(cfg, 11), tc) for _ in range(2)]
    # repr so that the nan loss of warm-up episodes compares equal.
    assert [repr(m.as_row()) for m in runs[0][1]] == [repr(m.as_row()) for m in runs[1][1]]
    assert serialize(runs[0][0].online) == serialize(runs[1][0].online)


def test_metrics_fields():
    cfg = default_config(1)
    tc = TrainerConfig(episodes=3, steps_per_episode=20, batch_size=8, hidden=(8,))
    _, metrics = run_training(FLNetEnv(cfg, 0), tc)
    assert [m.episode for m in metrics] == [0, 1, 2]
    for m in metrics:
        assert sum(m.channel_counts) == 20
        assert m.reward == pytest.approx(m.utility - m.channel_cost - m.energy_cost, abs=1e-9)
        assert -2 * 20 <= m.reward <= 3 * 20


def test_checkpoint_roundtrip(tmp_path):
    cfg = default_config(1)
    tc = TrainerConfig(episodes=2, steps_per_episode=20, batch_size=8, hidden=(8,))
    agent, _ = run_training(FLNetEnv(cfg, 0), tc)
    path = tmp_path / "agent.npz"
    agent.save(path)
    back = DDQNAgent.load(path, cfg, tc)
    assert serialize(back.online) == serialize(agent.online)
    assert serialize(back.target) == serialize(agent.target)
    assert back.opt.step == agent.opt.step and back.iteration == agent.iteration
    assert back.memory.cursor == agent.memory.cursor
    assert all(np.array_equal(a, b) for a, b in zip(back.opt.m, agent.opt.m))
