"""Experiment runner: train agents, evaluate greedy rollouts, sweep parameters, write CSV.

Every number written by this module is derived from a master seed, so a
re-run with the same seed reproduces every output file byte for byte.
Floats are written with ``repr`` to keep the text round-trippable.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .baselines import ExactMdp, GreedyPolicy, RandomPolicy, value_iteration, worker_kernel
from .config import EnvConfig
from .ddqn import DDQNAgent, TrainerConfig, run_training
from .env import (CHANNEL, X, FLNetEnv, decode_action, encode_action, encode_state,
                  write_trajectory)
from .qlearning import QLearningAgent, QTable, linear_decay, train_q_learning

log = logging.getLogger(__name__)

AGENT_KINDS = ("dql", "ql", "greedy", "random", "oracle")
REWARD_UNIT = "sum of per-step rewards over one evaluation episode, greedy (epsilon=0) rollouts"


@dataclass
class MetricsRecord:
    """One episode.  ``reward == utility - channel_cost - energy_cost`` (scaled, normalized terms)."""

    episode: int
    reward: float
    utility: float
    channel_cost: float
    energy_cost: float
    selections: np.ndarray  # (N + 1, 2): chosen channel vs mobility state, all workers

    def as_row(self) -> list:
        return [self.episode, repr(self.reward), repr(self.utility), repr(self.channel_cost),
                repr(self.energy_cost), *map(int, self.selections.ravel())]


def metrics_header(num_channels: int) -> list[str]:
    sel = [f"sel_c{c}_x{x}" for c in range(num_channels + 1) for x in (0, 1)]
    return ["episode", "reward", "utility", "channel_cost", "energy_cost", *sel]


def write_metrics(path: str | Path, records: Sequence[MetricsRecord], num_channels: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_header(num_channels))
        for rec in records:
            writer.writerow(rec.as_row())


def smooth(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average the available prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# Policies wrapping learned agents

class DDQNPolicy:
    name = "dql"

    def __init__(self, agent: DDQNAgent):
        self.agent = agent

    def act(self, state) -> np.ndarray:
        return decode_action(self.agent.greedy_action(state), self.agent.env_config)


class QTablePolicy:
    name = "ql"

    def __init__(self, table: QTable, config: EnvConfig):
        self.table = table
        self.config = config

    def act(self, state) -> np.ndarray:
        s = encode_state(state, self.config)
        return decode_action(int(np.argmax(self.table.values[s])), self.config)


def factored_q(config: EnvConfig, gamma: float, tol: float = 1e-8) -> list[np.ndarray]:
    """Per-worker optimal Q-tables.

    Workers share no randomness, their rewards add up and each controls
    only its own action pair, so the joint optimum is
    ``Q*(s, a) = sum_l Q*_l(s_l, a_l)``.
    """
    out = []
    for l in range(config.num_workers):
        P, R = worker_kernel(config, l)
        out.append(value_iteration(ExactMdp(P, R, config), gamma, tol).q)
    return out


class OraclePolicy:
    """Exact optimal policy (per-worker value iteration, valid for any number of workers)."""

    name = "oracle"

    def __init__(self, config: EnvConfig, gamma: float):
        self.config = config
        self._best = [np.argmax(q, axis=1) for q in factored_q(config, gamma)]
        self._emax = config.max_energy

    def act(self, state) -> np.ndarray:
        s = np.asarray(state)
        out = np.empty((self.config.num_workers, 2), dtype=np.int64)
        for l, best in enumerate(self._best):
            w, e, x = s[l]
            out[l] = divmod(int(best[(w * (self._emax + 1) + e) * 2 + x]), self._emax + 1)
        return out


# ---------------------------------------------------------------------------
# Training and evaluation

def _seeds(cell_seed: int) -> dict[str, int]:
    children = np.random.SeedSequence(cell_seed).spawn(4)
    return {name: int(c.generate_state(1)[0]) for name, c in
            zip(("train_env", "agent", "eval_env", "policy"), children)}


def train_agent(kind: str, config: EnvConfig, trainer: TrainerConfig, seed: int,
                ql_learning_rate: float = 0.1):
    """Build (and train, for learning agents) a policy; returns ``(policy, training records)``."""
    seeds = _seeds(seed)
    if kind == "greedy":
        return GreedyPolicy(config), []
    if kind == "random":
        return RandomPolicy(config, seeds["policy"]), []
    if kind == "oracle":
        return OraclePolicy(config, trainer.discount), []
    env = FLNetEnv(config, seeds["train_env"])
    if kind == "dql":
        tc = TrainerConfig(**{**asdict(trainer), "seed": seeds["agent"]})
        agent, metrics = run_training(env, tc)
        records = [MetricsRecord(m.episode, m.reward, m.utility, m.channel_cost, m.energy_cost,
                                 np.zeros((config.num_channels + 1, 2), dtype=np.int64)) for m in metrics]
        return DDQNPolicy(agent), records
    if kind == "ql":
        table = QTable.zeros(config, learning_rate=ql_learning_rate, discount=trainer.discount)
        agent = QLearningAgent(table, epsilon=linear_decay(trainer.epsilon_start, trainer.epsilon_end,
                                                           trainer.horizon))
        rng = np.random.default_rng(seeds["agent"])
        returns = train_q_learning(env, agent, trainer.episodes, trainer.steps_per_episode, rng)
        nan = float("nan")
        records = [MetricsRecord(i, r, nan, nan, nan, np.zeros((config.num_channels + 1, 2), dtype=np.int64))
                   for i, r in enumerate(returns)]
        return QTablePolicy(table, config), records
    raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")


def evaluate_policy(policy, config: EnvConfig, episodes: int, steps: int, seed: int,
                    trajectory: list | None = None) -> list[MetricsRecord]:
    """Roll out ``policy`` without learning.

    Pass a list as ``trajectory`` to collect rows for
    :func:`flnet.env.write_trajectory`.
    """
    env = FLNetEnv(config, seed)
    L, N = config.num_workers, config.num_channels
    lo, hi = config.reward_bounds
    records = []
    for ep in range(episodes):
        env.reset()
        tot = np.zeros(4)
        sel = np.zeros((N + 1, 2), dtype=np.int64)
        for t in range(steps):
            state = env.state
            action = np.asarray(policy.act(state), dtype=np.int64).reshape(L, 2)
            np.add.at(sel, (action[:, CHANNEL], state[:, X]), 1)
            s_idx = env.state_index
            out = env.step(action)
            if not lo - 1e-12 <= out.reward <= hi + 1e-12:
                raise RuntimeError(f"step reward {out.reward} outside [{lo}, {hi}]")
            tot += (out.reward, out.utility_term, out.channel_term, out.energy_term)
            if trajectory is not None:
                trajectory.append((ep, t, s_idx, encode_action(action, config), out.reward, *out.success))
        records.append(MetricsRecord(ep, float(tot[0]), float(tot[1]), float(tot[2]), float(tot[3]), sel))
    return records


def policy_histogram(policy, config: EnvConfig, num_rollouts: int, steps: int, seed: int) -> np.ndarray:
    """Counts ``[worker, in_coverage, channel]`` of channel choices along greedy rollouts."""
    env = FLNetEnv(config, seed)
    L = config.num_workers
    counts = np.zeros((L, 2, config.num_channels + 1), dtype=np.int64)
    workers = np.arange(L)
    for _ in range(num_rollouts):
        env.reset()
        for _ in range(steps):
            state = env.state
            action = np.asarray(policy.act(state)).reshape(L, 2)
            np.add.at(counts, (workers, state[:, X], action[:, CHANNEL]), 1)
            env.step(action)
    return counts


def write_histogram(path: str | Path, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker", "in_coverage", "channel", "count", "fraction"])
        L, _, C = counts.shape
        for l in range(L):
            for x in (0, 1):
                total = counts[l, x].sum()
                for c in range(C):
                    frac = counts[l, x, c] / total if total else 0.0
                    writer.writerow([l + 1, x, c, int(counts[l, x, c]), repr(float(frac))])


# ---------------------------------------------------------------------------
# Ordering verdict

@dataclass
class OrderingCheck:
    description: str
    left: str
    right: str
    margin: float
    left_value: float
    right_value: float
    passed: bool


@dataclass
class OrderingReport:
    checks: list[OrderingCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            verdict = "PASS" if c.passed else "FAIL"
            out.append(f"{verdict} {c.description}: {c.left}={c.left_value:.6g} "
                       f"{c.right}={c.right_value:.6g} (margin {c.margin:.0%})")
        out.append(f"{'PASS' if self.passed else 'FAIL'} overall")
        return out


def _beats(a: float, b: float, margin: float) -> bool:
    # "a beats b by margin" relative to |b|; zero margin means strictly greater.
    if margin == 0.0:
        return a > b
    return a - b >= margin * abs(b) and a > b


def reward_ordering_report(rewards: dict[str, float], margin: float = 0.10) -> OrderingReport:
    """Check DQL > greedy > random (each by ``margin``) and DQL >= QL."""
    missing = {"dql", "ql", "greedy", "random"} - set(rewards)
    if missing:
        raise KeyError(f"missing agent results: {sorted(missing)}")
    r = rewards
    checks = [
        OrderingCheck("dql beats greedy", "dql", "greedy", margin, r["dql"], r["greedy"],
                      _beats(r["dql"], r["greedy"], margin)),
        OrderingCheck("greedy beats random", "greedy", "random", margin, r["greedy"], r["random"],
                      _beats(r["greedy"], r["random"], margin)),
        OrderingCheck("dql at least ql", "dql", "ql", 0.0, r["dql"], r["ql"],
                      r["dql"] >= r["ql"]),
    ]
    return OrderingReport(checks)


# ---------------------------------------------------------------------------
# Experiments

@dataclass
class ExperimentSpec:
    config: EnvConfig = field(default_factory=EnvConfig)
    agents: tuple[str, ...] = ("dql", "ql", "greedy", "random")
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sweep_param: str | None = None
    sweep_values: tuple[float, ...] = ()
    out_dir: str | Path = "results"
    seed: int = 0
    smoothing_window: int = 100
    eval_episodes: int = 100
    eval_steps: int | None = None
    ql_learning_rate: float = 0.1
    write_trajectories: bool = False
    # Give every sweep cell the master seed itself instead of seed + index, so
    # cells differ only in the swept parameter (common random numbers).
    common_random_numbers: bool = False

    def __post_init__(self) -> None:
        self.agents = tuple(self.agents)
        bad = [a for a in self.agents if a not in AGENT_KINDS]
        if bad:
            raise ValueError(f"unknown agent kinds {bad}; expected a subset of {AGENT_KINDS}")
        if self.sweep_param is not None and not self.sweep_values:
            raise ValueError("a sweep needs at least one value")
        self.sweep_values = tuple(self.sweep_values)
        if self.smoothing_window < 1 or self.eval_episodes < 1:
            raise ValueError("smoothing_window and eval_episodes must be >= 1")
        # Validate every sweep cell before any work starts.
        for v in self.sweep_values:
            self.cell_config(v)

    @property
    def steps(self) -> int:
        return self.eval_steps or self.trainer.steps_per_episode

    def cell_config(self, value) -> EnvConfig:
        if self.sweep_param is None:
            return self.config
        if self.sweep_param in ("L", "num_workers"):
            return self.config.with_workers(int(value))
        return self.config.replace(**{self.sweep_param: value})

    def cells(self) -> list[tuple[int, float | None, EnvConfig]]:
        values = self.sweep_values if self.sweep_param is not None else (None,)
        return [(i, v, self.cell_config(v)) for i, v in enumerate(values)]


SUMMARY_HEADER = ["sweep_param", "sweep_value", "agent", "cell_seed", "eval_episodes", "steps",
                  "final_reward", "mean_reward", "std_reward", "mean_utility", "mean_channel_cost",
                  "mean_energy_cost", "train_final_smoothed", "smoothing_window"]


def _tag(agent: str, param: str | None, value) -> str:
    return agent if param is None else f"{agent}_{param}={value:g}"


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Run every (sweep value, agent) cell and write per-cell CSVs plus ``summary.csv``.

    Cell ``i`` uses seed ``spec.seed + i`` (or ``spec.seed`` with
    ``common_random_numbers``) for every agent so that all agents of a cell
    are evaluated on the same random stream.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, value, cfg in spec.cells():
        cell_seed = spec.seed if spec.common_random_numbers else spec.seed + i
        eval_seed = _seeds(cell_seed)["eval_env"]
        for kind in spec.agents:
            tag = _tag(kind, spec.sweep_param, value)
            log.info("cell %d (%s=%s) agent %s", i, spec.sweep_param, value, kind)
            policy, train_records = train_agent(kind, cfg, spec.trainer, cell_seed, spec.ql_learning_rate)
            if train_records:
                write_metrics(out / f"train_{tag}.csv", train_records, cfg.num_channels)
            traj = [] if spec.write_trajectories else None
            records = evaluate_policy(policy, cfg, spec.eval_episodes, spec.steps, eval_seed, traj)
            write_metrics(out / f"eval_{tag}.csv", records, cfg.num_channels)
            if traj is not None:
                write_trajectory(out / f"trajectory_{tag}.csv", traj, cfg.num_workers)
            if kind == "dql":
                policy.agent.save(out / f"checkpoint_{tag}.npz")
            rewards = np.array([r.reward for r in records])
            train_final = (smooth([r.reward for r in train_records], spec.smoothing_window)[-1]
                           if train_records else float("nan"))
            rows.append({
                "sweep_param": spec.sweep_param or "",
                "sweep_value": "" if value is None else repr(float(value)),
                "agent": kind,
                "cell_seed": cell_seed,
                "eval_episodes": spec.eval_episodes,
                "steps": spec.steps,
                "final_reward": float(smooth(rewards, spec.smoothing_window)[-1]),
                "mean_reward": float(rewards.mean()),
                "std_reward": float(rewards.std()),
                "mean_utility": float(np.mean([r.utility for r in records])),
                "mean_channel_cost": float(np.mean([r.channel_cost for r in records])),
                "mean_energy_cost": float(np.mean([r.energy_cost for r in records])),
                "train_final_smoothed": float(train_final),
                "smoothing_window": spec.smoothing_window,
            })
    write_summary(out / "summary.csv", rows)
    meta = {"reward_unit": REWARD_UNIT, "seed": spec.seed, "agents": list(spec.agents),
            "sweep_param": spec.sweep_param, "sweep_values": list(spec.sweep_values),
            "config": spec.config.to_dict(), "trainer": asdict(spec.trainer)}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return rows


def write_summary(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[k] for k in SUMMARY_HEADER)])


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("final_reward", "mean_reward", "std_reward", "mean_utility",
                    "mean_channel_cost", "mean_energy_cost", "train_final_smoothed"):
            row[key] = float(row[key])
    return rows


def final_rewards(rows: Iterable[dict], sweep_value: str | None = None) -> dict[str, float]:
    """``agent -> final_reward`` for one sweep cell (the only cell if not sweeping)."""
    out = {}
    for row in rows:
        if sweep_value is None or row["sweep_value"] == sweep_value:
            out[row["agent"]] = float(row["final_reward"])
    return out
