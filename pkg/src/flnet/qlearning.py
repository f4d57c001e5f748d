"""Tabular Q-learning over encoded state and action indices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import EnvConfig
from .env import FLNetEnv, action_space_size, state_space_size


@dataclass
class QTable:
    values: np.ndarray
    learning_rate: float = 0.1
    discount: float = 0.9

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("Q-table must be two-dimensional")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")

    @classmethod
    def zeros(cls, config: EnvConfig, learning_rate: float = 0.1, discount: float = 0.9,
              dtype=np.float64) -> "QTable":
        shape = (state_space_size(config), action_space_size(config))
        return cls(np.zeros(shape, dtype=dtype), learning_rate, discount)

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), self.learning_rate, self.discount)


def q_update(table: QTable, s: int, a: int, r: float, s_next: int,
             learning_rate: float | None = None) -> float:
    """One Q-learning update; returns the new ``Q(s, a)``.

    ``Q(s,a) <- (1 - b) Q(s,a) + b (r + gamma max_a' Q(s', a'))`` with
    ``b = learning_rate`` if given, else the table's own rate.
    """
    S, A = table.values.shape
    if not (0 <= s < S and 0 <= s_next < S and 0 <= a < A):
        raise IndexError(f"index out of range for table of shape {(S, A)}")
    beta = table.learning_rate if learning_rate is None else learning_rate
    target = r + table.discount * table.values[s_next].max()
    new = (1.0 - beta) * table.values[s, a] + beta * target
    table.values[s, a] = new
    return float(new)


def select_action_epsilon_greedy(table: QTable, s: int, epsilon: float,
                                 rng: np.random.Generator) -> int:
    # np.argmax returns the first maximum: ties go to the lowest index.
    if rng.random() < epsilon:
        return int(rng.integers(table.num_actions))
    return int(np.argmax(table.values[s]))


def greedy_policy(table: QTable) -> np.ndarray:
    """Best action index per state (lowest index on ties)."""
    return np.argmax(table.values, axis=1)


def save_qtable(table: QTable, path: str | Path) -> None:
    """CSV of ``state,action,value`` triples (full table, row-major)."""
    S, A = table.values.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "action", "value"])
        for s in range(S):
            for a in range(A):
                writer.writerow([s, a, repr(float(table.values[s, a]))])


def load_qtable(path: str | Path, learning_rate: float = 0.1, discount: float = 0.9) -> QTable:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    S = int(data[:, 0].max()) + 1
    A = int(data[:, 1].max()) + 1
    values = np.zeros((S, A))
    values[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
    return QTable(values, learning_rate, discount)


# ---------------------------------------------------------------------------
# Training loop

def constant(value: float) -> Callable[[int], float]:
    return lambda _: value


def linear_decay(start: float, end: float, horizon: int) -> Callable[[int], float]:
    def schedule(t: int) -> float:
        if horizon <= 0:
            return end
        return max(end, start - (start - end) * t / horizon)
    return schedule


@dataclass
class QLearningAgent:
    """Q-learning agent with pluggable exploration and step-size schedules.

    ``epsilon`` maps the global iteration to an exploration rate.  When
    ``visit_exponent`` is set, the step size for a pair visited ``n`` times
    is ``max(min_lr, 1 / n ** visit_exponent)`` instead of the table rate.
    """

    table: QTable
    epsilon: Callable[[int], float] = field(default_factory=lambda: constant(0.1))
    visit_exponent: float | None = None
    min_lr: float = 0.0
    visits: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self) -> None:
        if self.visits is None:
            self.visits = np.zeros(self.table.values.shape, dtype=np.int64)

    def act(self, s: int, rng: np.random.Generator) -> int:
        return select_action_epsilon_greedy(self.table, s, self.epsilon(self.iteration), rng)

    def learn(self, s: int, a: int, r: float, s_next: int) -> float:
        self.visits[s, a] += 1
        lr = None
        if self.visit_exponent is not None:
            lr = max(self.min_lr, self.visits[s, a] ** -self.visit_exponent)
        self.iteration += 1
        return q_update(self.table, s, a, r, s_next, lr)

    def greedy_action(self, s: int) -> int:
        return int(np.argmax(self.table.values[s]))


def train_q_learning(env: FLNetEnv, agent: QLearningAgent, episodes: int, steps: int,
                     rng: np.random.Generator | None = None) -> list[float]:
    """Run ``episodes`` episodes of ``steps`` steps; returns per-episode reward sums."""
    rng = env.rng if rng is None else rng
    returns = []
    for _ in range(episodes):
        env.reset()
        s = env.state_index
        total = 0.0
        for _ in range(steps):
            a = agent.act(s, rng)
            out = env.step_index(a)
            s_next = env.state_index
            agent.learn(s, a, out.reward, s_next)
            total += out.reward
            s = s_next
        returns.append(total)
    return returns
