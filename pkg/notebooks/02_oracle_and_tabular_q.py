"""
Exact values and tabular Q-learning on one worker
=================================================

With a single worker the model has 16 states and 16 actions, small enough
to enumerate.  Value iteration gives the exact Q*; tabular Q-learning is
then checked against it.
"""

import time

import numpy as np

from flnet.baselines import build_exact_mdp, value_iteration
from flnet.config import default_config
from flnet.env import FLNetEnv, decode_action, decode_state
from flnet.qlearning import QLearningAgent, QTable, constant, train_q_learning

cfg = default_config(1)
mdp = build_exact_mdp(cfg)
print("kernel rows sum to one:", np.allclose(mdp.P.sum(axis=2), 1.0))

res = value_iteration(mdp, gamma=0.9)
print(f"value iteration: {res.sweeps} sweeps, residual {res.residual:.1e}")

# The optimal action in every state.  Out of coverage (X=0) the cheaper paid
# channel 2 replaces the unusable default channel.
for s in range(16):
    w, e, x = decode_state(s, cfg)[0]
    ch, rc = decode_action(res.policy[s], cfg)[0]
    print(f"w={w} e={e} X={x}: channel {ch}, recharge {rc}, V*={res.v[s]:.3f}")

# Q-learning with uniform exploration and a per-pair step size 1/n^0.7.
agent = QLearningAgent(QTable.zeros(cfg), epsilon=constant(1.0), visit_exponent=0.7)
env = FLNetEnv(cfg, seed=0)
rng = np.random.default_rng(1)
start = time.time()
for block in range(5):
    train_q_learning(env, agent, 400, 100, rng)
    err = np.abs(agent.table.values - res.q).max()
    print(f"{(block + 1) * 400:5d} episodes: max |Q - Q*| = {err:.3f} ({time.time() - start:.0f}s)")
