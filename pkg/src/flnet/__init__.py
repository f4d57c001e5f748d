"""Channel selection and battery recharge for mobile federated-learning workers.

Simulator, tabular Q-learning, double deep Q-learning on a from-scratch
MLP, greedy/random baselines and an exact value-iteration oracle.
"""
from .config import EnvConfig, default_config, load_config
from .env import (FLNetEnv, JointAction, NetworkState, StepOutcome, WorkerAction, WorkerState,
                  action_space_size, decode_action, decode_state, encode_action, encode_state,
                  state_space_size, step)

__version__ = "0.1.0"

__all__ = [
    "EnvConfig", "FLNetEnv", "JointAction", "NetworkState", "StepOutcome", "WorkerAction",
    "WorkerState", "action_space_size", "decode_action", "decode_state", "default_config",
    "encode_action", "encode_state", "load_config", "state_space_size", "step",
]
