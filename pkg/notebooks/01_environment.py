"""
Stepping through the channel and energy model
=============================================

A tour of the simulator: parameters, the state and action codecs, one
step of the dynamics and the decomposition of the reward.
"""

import numpy as np

from flnet.config import default_config
from flnet.env import (FLNetEnv, action_space_size, decode_action, encode_action, encode_state,
                       state_space_size)

# The packaged reference setting: three workers, three channels, batteries of three units.
cfg = default_config()
print(cfg)
print("states:", state_space_size(cfg), "actions:", action_space_size(cfg))

# A worker state is (w, e, X): last-step success flag, energy, coverage flag.
# Worker 1 is the most significant digit of the joint index.
state = np.array([[0, 3, 1], [1, 1, 0], [0, 2, 1]])
print("state index:", encode_state(state, cfg))

# A worker action is (channel, recharge); channel 0 means no transmission.
action = np.array([[2, 0], [3, 2], [1, 1]])
a_idx = encode_action(action, cfg)
print("action index:", a_idx, "->", decode_action(a_idx, cfg).tolist())

# One step from a fixed seed.
env = FLNetEnv(cfg, seed=0)
env.reset()
out = env.step(action)
print("success:", out.success.tolist())
print("next state:", out.next_state.tolist())

# The reward is the normalized utility minus the normalized channel and energy costs.
print(f"reward {out.reward:.4f} = {out.utility_term:.4f} - {out.channel_term:.4f} - {out.energy_term:.4f}")
print("bounds:", cfg.reward_bounds)

# Lower coverage makes the free channel unreliable; a paid channel still works.
low = cfg.replace(q_mo=0.1)
env = FLNetEnv(low, seed=1)
env.reset()
free = np.mean([env.step(np.array([[1, 1]] * 3)).success.mean() for _ in range(2000)])
env.reset()
paid = np.mean([env.step(np.array([[2, 1]] * 3)).success.mean() for _ in range(2000)])
print(f"success rate at q_mo=0.1: default channel {free:.3f}, channel 2 {paid:.3f}")
