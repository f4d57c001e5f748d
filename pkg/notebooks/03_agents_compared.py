"""
Comparing the agents at the reference setting
=============================================

Trains the double deep Q-learning agent, evaluates it alongside the greedy
and random baselines and the exact optimum, and looks at which channel
worker 1 picks when it is out of coverage.

Set ``FLNET_EPISODES`` to change the training budget (default 300; about
1000 episodes are needed for the learned policy to clearly beat greedy).
"""

import os

import numpy as np

from flnet.baselines import GreedyPolicy, RandomPolicy
from flnet.config import default_config
from flnet.ddqn import TrainerConfig
from flnet.harness import OraclePolicy, evaluate_policy, policy_histogram, smooth, train_agent

episodes = int(os.environ.get("FLNET_EPISODES", 300))
cfg = default_config()

dql, train_records = train_agent("dql", cfg, TrainerConfig(episodes=episodes), seed=0)
curve = smooth([r.reward for r in train_records], 100)
print("smoothed training reward every 10%:", np.round(curve[:: max(1, episodes // 10)], 1))

policies = {"dql": dql, "greedy": GreedyPolicy(cfg), "random": RandomPolicy(cfg, 0),
            "oracle": OraclePolicy(cfg, 0.9)}
for name, policy in policies.items():
    rewards = [r.reward for r in evaluate_policy(policy, cfg, 50, 100, seed=1)]
    print(f"{name:>7}: {np.mean(rewards):7.2f} per 100-step episode")

# Channel choices of worker 1, split by coverage.
counts = policy_histogram(dql, cfg, 50, 100, seed=2)
for x, label in ((0, "out of coverage"), (1, "in coverage")):
    row = counts[0, x]
    print(f"worker 1 {label}: " + ", ".join(f"ch{c} {n / row.sum():.0%}" for c, n in enumerate(row)))
