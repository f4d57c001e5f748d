"""Double deep Q-learning with experience replay and a periodically synced target net."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import EnvConfig
from .env import (FLNetEnv, action_space_size, decode_action, state_features)
from .neural import (AdamState, Mlp, adam_step, backward, clone_weights, copy_into,
                     deserialize, forward, hidden_activations, output_at, serialize)

HIDDEN_LAYERS = (32, 32, 32)


@dataclass
class TrainerConfig:
    discount: float = 0.9
    learning_rate: float = 1e-3
    epsilon_start: float = 0.9
    epsilon_end: float = 0.0
    # Iterations over which epsilon decays linearly; None -> 80% of the run.
    epsilon_horizon: int | None = None
    # Large batches and slow target syncs damp the policy jitter late in training.
    target_sync: int = 2000
    batch_size: int = 128
    replay_capacity: int = 10_000
    episodes: int = 10_000
    steps_per_episode: int = 100
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN_LAYERS
    # Single precision roughly halves the cost of the wide output layer.
    dtype: str = "float32"

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if not 1 <= self.batch_size <= self.replay_capacity:
            raise ValueError("batch_size must lie in [1, replay_capacity]")
        if self.episodes < 0 or self.steps_per_episode < 1:
            raise ValueError("episodes must be >= 0 and steps_per_episode >= 1")

    @property
    def total_iterations(self) -> int:
        return self.episodes * self.steps_per_episode

    @property
    def horizon(self) -> int:
        if self.epsilon_horizon is not None:
            return self.epsilon_horizon
        return int(0.8 * self.total_iterations)


def epsilon_at(iteration: int, config: TrainerConfig) -> float:
    """Exploration rate after ``iteration`` iterations (linear decay, then flat)."""
    start, end, horizon = config.epsilon_start, config.epsilon_end, config.horizon
    if horizon <= 0:
        return end
    return max(end, start - (start - end) * iteration / horizon)


class ReplayMemory:
    """Fixed-capacity FIFO of transitions stored as network input features."""

    def __init__(self, capacity: int, feature_dim: int, dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, feature_dim), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=dtype)
        self.next_states = np.zeros((capacity, feature_dim), dtype=dtype)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s: np.ndarray, a: int, r: float, s_next: np.ndarray) -> None:
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform minibatch drawn with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay memory")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


def ddqn_target(r, s_next, online: Mlp, target: Mlp, gamma: float):
    """``r + gamma * Q_target(s', argmax_a' Q_online(s', a'))`` (batched or scalar).

    The online net selects the next action, the target net scores it.
    """
    s_next = np.atleast_2d(s_next)
    a_max = np.argmax(forward(online, s_next), axis=-1)
    h_target = hidden_activations(target, s_next)[-1]
    chosen = output_at(target, h_target, a_max)
    y = np.asarray(r, dtype=np.float64) + gamma * chosen.reshape(np.shape(r))
    return float(y) if y.ndim == 0 else y


class DDQNAgent:
    """Online/target network pair plus replay memory and optimizer state."""

    def __init__(self, env_config: EnvConfig, config: TrainerConfig | None = None):
        self.env_config = env_config
        self.config = config or TrainerConfig()
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed)
        in_dim = 3 * env_config.num_workers
        sizes = (in_dim, *cfg.hidden, action_space_size(env_config))
        self.online = Mlp(sizes, rng=self.rng, dtype=np.dtype(cfg.dtype))
        self.target = clone_weights(self.online)
        self.opt = AdamState.for_net(self.online, learning_rate=cfg.learning_rate)
        self.memory = ReplayMemory(cfg.replay_capacity, in_dim, dtype=np.dtype(cfg.dtype))
        self.iteration = 0

    @property
    def num_actions(self) -> int:
        return self.online.output_dim

    def features(self, state) -> np.ndarray:
        return state_features(state, self.env_config)

    def q_values(self, state) -> np.ndarray:
        return forward(self.online, self.features(state))

    def greedy_action(self, state) -> int:
        return int(np.argmax(self.q_values(state)))

    def act(self, state, epsilon: float) -> int:
        if self.rng.random() < epsilon:
            return int(self.rng.integers(self.num_actions))
        return self.greedy_action(state)

    def train_step(self, batch) -> float:
        """One Adam step on a batch ``(s, a, r, s')``; returns the pre-step mean squared error."""
        s, a, r, s_next = batch
        if len(a) == 0:
            raise ValueError("empty batch")
        y = ddqn_target(r, s_next, self.online, self.target, self.config.discount)
        grads, half_mse = backward(self.online, s, y, a)
        adam_step(self.online, grads, self.opt)
        return 2.0 * half_mse

    def sync_target(self) -> None:
        copy_into(self.online, self.target)

    def observe(self, s_feat, a, r, s_next_feat) -> float | None:
        """Store a transition, learn from a minibatch and sync on schedule.

        Returns the loss, or None while the memory holds fewer samples than
        one batch.
        """
        cfg = self.config
        self.memory.push(s_feat, a, r, s_next_feat)
        loss = None
        if len(self.memory) >= cfg.batch_size:
            loss = self.train_step(self.memory.sample(cfg.batch_size, self.rng))
        self.iteration += 1
        if self.iteration % cfg.target_sync == 0:
            self.sync_target()
        return loss

    # -- checkpointing ---------------------------------------------------
    def save(self, path: str | Path) -> None:
        """Weights of both nets, Adam moments and replay cursor (not its contents)."""
        arrays = {
            "online": np.frombuffer(serialize(self.online), dtype=np.uint8),
            "target": np.frombuffer(serialize(self.target), dtype=np.uint8),
            "adam_step": np.array(self.opt.step),
            "iteration": np.array(self.iteration),
            "memory_cursor": np.array([self.memory.cursor, self.memory.size]),
        }
        for i, (m, v) in enumerate(zip(self.opt.m, self.opt.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path, env_config: EnvConfig,
             config: TrainerConfig | None = None) -> "DDQNAgent":
        agent = cls(env_config, config)
        with np.load(path) as data:
            agent.online = deserialize(data["online"].tobytes())
            agent.target = deserialize(data["target"].tobytes())
            n = len(agent.online.parameters())
            agent.opt.m = [data[f"adam_m{i}"].copy() for i in range(n)]
            agent.opt.v = [data[f"adam_v{i}"].copy() for i in range(n)]
            agent.opt.step = int(data["adam_step"])
            agent.iteration = int(data["iteration"])
            agent.memory.cursor, agent.memory.size = (int(v) for v in data["memory_cursor"])
        return agent


@dataclass
class EpisodeMetrics:
    episode: int
    reward: float
    utility: float
    channel_cost: float
    energy_cost: float
    mean_loss: float
    epsilon: float
    channel_counts: tuple[int, ...]

    def as_row(self) -> dict:
        row = asdict(self)
        counts = row.pop("channel_counts")
        row.update({f"channel_{c}": n for c, n in enumerate(counts)})
        return row


def run_training(env: FLNetEnv, config: TrainerConfig,
                 agent: DDQNAgent | None = None) -> tuple[DDQNAgent, list[EpisodeMetrics]]:
    """Train with epsilon-greedy acting, replay and double-Q targets.

    Each iteration: act, step, store the transition, learn from a uniform
    minibatch once the memory holds a full batch, and copy the online
    weights to the target net every ``target_sync`` iterations.
    """
    agent = agent or DDQNAgent(env.config, config)
    cfg_env = env.config
    metrics: list[EpisodeMetrics] = []
    for episode in range(config.episodes):
        env.reset()
        s_feat = agent.features(env.state)
        tot = np.zeros(4)
        losses = []
        counts = np.zeros(cfg_env.num_channels + 1, dtype=np.int64)
        eps = epsilon_at(agent.iteration, config)
        for _ in range(config.steps_per_episode):
            eps = epsilon_at(agent.iteration, config)
            a = agent.act(env.state, eps)
            joint = decode_action(a, cfg_env)
            out = env.step(joint)
            s_next_feat = agent.features(out.next_state)
            loss = agent.observe(s_feat, a, out.reward, s_next_feat)
            if loss is not None:
                losses.append(loss)
            tot += (out.reward, out.utility_term, out.channel_term, out.energy_term)
            counts += np.bincount(joint[:, 0], minlength=counts.size)
            s_feat = s_next_feat
        metrics.append(EpisodeMetrics(
            episode, float(tot[0]), float(tot[1]), float(tot[2]), float(tot[3]),
            float(np.mean(losses)) if losses else float("nan"), float(eps), tuple(int(c) for c in counts)))
    return agent, metrics
