"""Stochastic dynamics of the downlink federated-learning network.

Each worker ``l`` carries a state ``(w, e, X)``: the channel flag (1 when
the last transmission to it went through), its battery level in energy
units, and whether it is inside the coverage area.  The model owner picks,
per worker, a channel (0 = skip, 1 = free default channel, ``n >= 2`` =
paid special channel ``n``) and a recharge amount.

Per step and per worker, in order:

1. the transmission succeeds iff a channel was chosen, the battery is not
   empty, the default channel is only used in coverage, and a uniform draw
   falls below the channel's success probability;
2. utility, channel cost and recharge cost are booked (a special channel is
   paid even when the transmission fails, recharge is paid in full even
   when the battery clips);
3. the battery drains by one or two units (two with probability
   ``p_energy_two`` when at least two units are left; one unit always
   empties to zero), then the recharge is added and clipped at capacity;
4. the next coverage flag is Bernoulli(``p_in_coverage``);
5. the next channel flag is the success indicator of this step.

All functions accept numpy arrays with a trailing worker axis so that a
batch of independent environments can be advanced in one call;
:func:`step` is simply the batch of one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .config import EnvConfig

# Column order of a state array (..., L, 3) and action array (..., L, 2).
W, E, X = 0, 1, 2
CHANNEL, RECHARGE = 0, 1

# One uniform draw per worker per purpose, consumed in this order.
DRAW_SUCCESS, DRAW_ENERGY, DRAW_MOBILITY = 0, 1, 2


class WorkerState(NamedTuple):
    channel_good: int
    energy: int
    in_coverage: int


class WorkerAction(NamedTuple):
    channel: int
    recharge: int


NetworkState = tuple[WorkerState, ...]
JointAction = tuple[WorkerAction, ...]


def state_array(state: NetworkState | np.ndarray) -> np.ndarray:
    return np.asarray(state, dtype=np.int64).reshape(-1, 3)


def action_array(action: JointAction | np.ndarray) -> np.ndarray:
    return np.asarray(action, dtype=np.int64).reshape(-1, 2)


def to_network_state(arr: np.ndarray) -> NetworkState:
    return tuple(WorkerState(*map(int, row)) for row in np.asarray(arr).reshape(-1, 3))


def to_joint_action(arr: np.ndarray) -> JointAction:
    return tuple(WorkerAction(*map(int, row)) for row in np.asarray(arr).reshape(-1, 2))


# ---------------------------------------------------------------------------
# Sizes and index codecs

def worker_state_radix(config: EnvConfig) -> int:
    return 2 * (config.max_energy + 1) * 2


def worker_action_radix(config: EnvConfig) -> int:
    return (config.num_channels + 1) * (config.max_energy + 1)


def state_space_size(config: EnvConfig) -> int:
    return worker_state_radix(config) ** config.num_workers


def action_space_size(config: EnvConfig) -> int:
    return worker_action_radix(config) ** config.num_workers


def _place_values(radix: int, num_workers: int) -> np.ndarray:
    # Worker 1 is the most significant digit.
    return radix ** np.arange(num_workers - 1, -1, -1, dtype=np.int64)


def encode_state(state, config: EnvConfig) -> int | np.ndarray:
    """Mixed-radix index of a state.

    The per-worker digit is ``(w * (e_max + 1) + e) * 2 + X`` and worker 1
    is the most significant digit.  Accepts a single state or a batch
    ``(..., L, 3)``; returns an int or an index array accordingly.
    """
    arr = np.asarray(state, dtype=np.int64)
    if arr.shape[-2:] != (config.num_workers, 3):
        raise ValueError(f"state shape {arr.shape} does not match {config.num_workers} workers")
    emax = config.max_energy
    if (np.any((arr[..., W] < 0) | (arr[..., W] > 1)) or np.any((arr[..., X] < 0) | (arr[..., X] > 1))
            or np.any((arr[..., E] < 0) | (arr[..., E] > emax))):
        raise ValueError("state component out of range")
    digits = (arr[..., W] * (emax + 1) + arr[..., E]) * 2 + arr[..., X]
    idx = digits @ _place_values(worker_state_radix(config), config.num_workers)
    return int(idx) if np.ndim(idx) == 0 else idx


def decode_state(index, config: EnvConfig) -> np.ndarray:
    """Inverse of :func:`encode_state`; returns an int array ``(..., L, 3)``."""
    idx = np.asarray(index, dtype=np.int64)
    if np.any((idx < 0) | (idx >= state_space_size(config))):
        raise ValueError(f"state index out of range [0, {state_space_size(config)})")
    radix = worker_state_radix(config)
    digits = (idx[..., None] // _place_values(radix, config.num_workers)) % radix
    out = np.empty(digits.shape + (3,), dtype=np.int64)
    out[..., X] = digits % 2
    rest = digits // 2
    out[..., E] = rest % (config.max_energy + 1)
    out[..., W] = rest // (config.max_energy + 1)
    return out


def encode_action(action, config: EnvConfig) -> int | np.ndarray:
    """Mixed-radix index of a joint action, digit ``channel * (e_max + 1) + recharge``."""
    arr = np.asarray(action, dtype=np.int64)
    if arr.shape[-2:] != (config.num_workers, 2):
        raise ValueError(f"action shape {arr.shape} does not match {config.num_workers} workers")
    if (np.any((arr[..., CHANNEL] < 0) | (arr[..., CHANNEL] > config.num_channels))
            or np.any((arr[..., RECHARGE] < 0) | (arr[..., RECHARGE] > config.max_energy))):
        raise ValueError("action component out of range")
    digits = arr[..., CHANNEL] * (config.max_energy + 1) + arr[..., RECHARGE]
    idx = digits @ _place_values(worker_action_radix(config), config.num_workers)
    return int(idx) if np.ndim(idx) == 0 else idx


def decode_action(index, config: EnvConfig) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64)
    if np.any((idx < 0) | (idx >= action_space_size(config))):
        raise ValueError(f"action index out of range [0, {action_space_size(config)})")
    radix = worker_action_radix(config)
    digits = (idx[..., None] // _place_values(radix, config.num_workers)) % radix
    out = np.empty(digits.shape + (2,), dtype=np.int64)
    out[..., CHANNEL] = digits // (config.max_energy + 1)
    out[..., RECHARGE] = digits % (config.max_energy + 1)
    return out


def all_states(config: EnvConfig) -> np.ndarray:
    return decode_state(np.arange(state_space_size(config)), config)


def all_actions(config: EnvConfig) -> np.ndarray:
    return decode_action(np.arange(action_space_size(config)), config)


def state_features(state, config: EnvConfig) -> np.ndarray:
    """Network input: per worker ``(w, e / e_max, X)`` flattened, values in [0, 1]."""
    arr = np.asarray(state, dtype=np.float64)
    scale = np.array([1.0, 1.0 / max(config.max_energy, 1), 1.0])
    return (arr * scale).reshape(arr.shape[:-2] + (3 * config.num_workers,))


# ---------------------------------------------------------------------------
# Per-worker rules

def _check_channel(channel, config: EnvConfig) -> np.ndarray:
    ch = np.asarray(channel, dtype=np.int64)
    if np.any((ch < 0) | (ch > config.num_channels)):
        raise ValueError(f"channel index must lie in [0, {config.num_channels}]")
    return ch


def success_probability(channel, energy, in_coverage, config: EnvConfig) -> np.ndarray:
    """Probability that a transmission to the worker goes through."""
    ch = _check_channel(channel, config)
    p = config.array("p_channel")[ch]
    usable = (np.asarray(energy) >= 1) & ((ch != 1) | (np.asarray(in_coverage) == 1))
    return np.where(usable, p, 0.0)


def transmission_success(worker, channel_choice, draw, config: EnvConfig):
    """1 if the transmission succeeds for uniform ``draw`` in [0, 1), else 0."""
    w = np.asarray(worker)
    p = success_probability(channel_choice, w[..., E], w[..., X], config)
    out = (np.asarray(draw) < p).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def channel_cost(channel_choice, config: EnvConfig):
    """Access cost of a channel: the special channel's price, 0 for skip/default."""
    out = config.array("channel_cost")[_check_channel(channel_choice, config)]
    return float(out) if np.ndim(out) == 0 else out


def energy_cost(in_coverage, worker_index, recharge, config: EnvConfig):
    """Recharge bill for one worker; ``worker_index`` is zero-based.

    Worker ``l`` pays ``recharge_weight[l]`` per unit inside coverage and
    ``recharge_weight_out`` per unit outside.
    """
    mu = config.array("mu")[np.asarray(worker_index)]
    out = np.where(np.asarray(in_coverage) == 1, mu, config.recharge_weight_out) * np.asarray(recharge)
    return float(out) if np.ndim(out) == 0 else out


def reward_terms(utility, chan_cost, en_cost, config: EnvConfig):
    """Scaled, normalized (utility, channel, energy) sums over the worker axis."""
    u = config.scale_utility * np.sum(utility, axis=-1) / config.utility_max
    c = config.scale_channel * np.sum(chan_cost, axis=-1) / config.channel_cost_max
    emax = config.energy_cost_max
    e = config.scale_energy * np.sum(en_cost, axis=-1) / emax if emax > 0 else np.zeros_like(u)
    return u, c, e


def reward(utility, chan_cost, en_cost, config: EnvConfig):
    """Per-step reward of the model owner.

    ``sum_l a_I * I_l / (Delta L) - a_c * C^c_l / (N L) - a_e * C^e_l / (mu_out e_max L)``
    """
    u, c, e = reward_terms(utility, chan_cost, en_cost, config)
    out = u - c - e
    return float(out) if np.ndim(out) == 0 else out


def energy_transition(energy, two_unit_draw, p_two, recharge, config: EnvConfig):
    """Battery level after one step of consumption followed by recharge."""
    e = np.asarray(energy, dtype=np.int64)
    drained = np.where(e >= 2, e - 1 - (np.asarray(two_unit_draw) < np.asarray(p_two)), 0)
    out = np.minimum(drained + np.asarray(recharge, dtype=np.int64), config.max_energy)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Composite step

@dataclass
class StepOutcome:
    """Result of one step; arrays carry a leading batch axis for batched calls."""

    reward: float | np.ndarray
    next_state: np.ndarray
    success: np.ndarray
    channel_cost: np.ndarray
    energy_cost: np.ndarray
    utility_term: float | np.ndarray
    channel_term: float | np.ndarray
    energy_term: float | np.ndarray

    @property
    def next_network_state(self) -> NetworkState:
        return to_network_state(self.next_state)


def apply_dynamics(states: np.ndarray, actions: np.ndarray, draws: np.ndarray,
                   config: EnvConfig) -> StepOutcome:
    """Deterministic core of :func:`step` given the uniform draws.

    ``states`` is ``(..., L, 3)``, ``actions`` ``(..., L, 2)`` and ``draws``
    ``(..., L, 3)`` with columns (success, energy, mobility).
    """
    L = config.num_workers
    if states.shape[-2:] != (L, 3) or actions.shape[-2:] != (L, 2):
        raise ValueError(f"state/action shapes {states.shape}/{actions.shape} do not match L={L}")
    ch = actions[..., CHANNEL]
    rc = actions[..., RECHARGE]
    if np.any((rc < 0) | (rc > config.max_energy)):
        raise ValueError("recharge amount out of range")
    energy = states[..., E]
    cover = states[..., X]

    p = success_probability(ch, energy, cover, config)
    success = (draws[..., DRAW_SUCCESS] < p).astype(np.int64)
    utility = config.utility_delta * success
    c_cost = config.array("channel_cost")[ch]
    mu = config.array("mu")
    e_cost = np.where(cover == 1, mu, config.recharge_weight_out) * rc

    nxt = np.empty_like(states)
    nxt[..., E] = energy_transition(energy, draws[..., DRAW_ENERGY], config.array("p_two"), rc, config)
    nxt[..., X] = draws[..., DRAW_MOBILITY] < config.array("q")
    nxt[..., W] = success

    u, c, e = reward_terms(utility, c_cost, e_cost, config)
    r = u - c - e
    lo, hi = config.reward_bounds
    if np.any(r < lo - 1e-12) or np.any(r > hi + 1e-12):
        raise RuntimeError(f"reward {r} outside [{lo}, {hi}]")
    return StepOutcome(r, nxt, success, c_cost, e_cost, u, c, e)


def step(state, action, rng: np.random.Generator, config: EnvConfig) -> StepOutcome:
    """Advance one network state by one step.

    ``state`` / ``action`` may be tuples of named tuples or int arrays.
    Draws ``3 * L`` uniforms from ``rng``.
    """
    s = state_array(state)
    a = action_array(action)
    if s.shape[0] != config.num_workers or a.shape[0] != config.num_workers:
        raise ValueError(f"expected {config.num_workers} workers, got state {s.shape[0]}, action {a.shape[0]}")
    out = step_batch(s[None], a[None], rng, config)
    return StepOutcome(float(out.reward[0]), out.next_state[0], out.success[0],
                       out.channel_cost[0], out.energy_cost[0], float(out.utility_term[0]),
                       float(out.channel_term[0]), float(out.energy_term[0]))


def step_batch(states: np.ndarray, actions: np.ndarray, rng: np.random.Generator,
               config: EnvConfig) -> StepOutcome:
    """Advance a batch ``(B, L, 3)`` of independent states."""
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    draws = rng.random(states.shape)
    return apply_dynamics(states, actions, draws, config)


class FLNetEnv:
    """Stateful wrapper around :func:`step` with episode resets.

    A fresh episode starts with full batteries, channel flags at 0 and
    coverage flags drawn from ``p_in_coverage``.
    """

    def __init__(self, config: EnvConfig, seed: int | None = None):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros((config.num_workers, 3), dtype=np.int64)
        self.state_index = 0

    @property
    def num_states(self) -> int:
        return state_space_size(self.config)

    @property
    def num_actions(self) -> int:
        return action_space_size(self.config)

    def reset(self) -> np.ndarray:
        cfg = self.config
        s = np.zeros((cfg.num_workers, 3), dtype=np.int64)
        s[:, E] = cfg.max_energy
        s[:, X] = self.rng.random(cfg.num_workers) < cfg.array("q")
        self.state = s
        self.state_index = encode_state(s, cfg)
        return s.copy()

    def step(self, action) -> StepOutcome:
        out = step(self.state, action, self.rng, self.config)
        self.state = out.next_state
        self.state_index = encode_state(out.next_state, self.config)
        return out

    def step_index(self, action_index: int) -> StepOutcome:
        return self.step(decode_action(action_index, self.config))


# ---------------------------------------------------------------------------
# Trajectory dump

def trajectory_header(num_workers: int) -> list[str]:
    return (["episode", "step", "state", "action", "reward"]
            + [f"success_{l + 1}" for l in range(num_workers)])


def write_trajectory(path: str | Path, rows: Iterable[Sequence], num_workers: int) -> None:
    """Write rows ``(episode, step, state_index, action_index, reward, *success)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(num_workers))
        for row in rows:
            ep, st, s, a, r, *succ = row
            writer.writerow([int(ep), int(st), int(s), int(a), repr(float(r)), *map(int, succ)])
