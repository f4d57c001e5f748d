"""Reference policies and an exact dynamic-programming solution of small instances."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Protocol, runtime_checkable

import numpy as np

from .config import EnvConfig
from .env import (CHANNEL, RECHARGE, E, X, action_space_size, all_states, decode_action,
                  encode_state, energy_cost, reward_terms, state_space_size,
                  success_probability, worker_action_radix, worker_state_radix)

MAX_PAIRS = 10**7


@runtime_checkable
class Policy(Protocol):
    """Anything that maps a state array ``(L, 3)`` to a joint action ``(L, 2)``."""

    def act(self, state: np.ndarray) -> np.ndarray: ...


def greedy_policy_act(state, config: EnvConfig) -> np.ndarray:
    """Most expensive channel and a full recharge for every worker, whatever the state."""
    out = np.empty((config.num_workers, 2), dtype=np.int64)
    out[:, CHANNEL] = config.num_channels
    out[:, RECHARGE] = config.max_energy
    return out


def random_policy_act(state, rng: np.random.Generator, config: EnvConfig) -> np.ndarray:
    L = config.num_workers
    out = np.empty((L, 2), dtype=np.int64)
    out[:, CHANNEL] = rng.integers(0, config.num_channels + 1, size=L)
    out[:, RECHARGE] = rng.integers(0, config.max_energy + 1, size=L)
    return out


class GreedyPolicy:
    name = "greedy"

    def __init__(self, config: EnvConfig):
        self.config = config
        self._action = greedy_policy_act(None, config)

    def act(self, state) -> np.ndarray:
        return self._action.copy()


class RandomPolicy:
    name = "random"

    def __init__(self, config: EnvConfig, rng: np.random.Generator | int | None = None):
        self.config = config
        self.rng = np.random.default_rng(rng)

    def act(self, state) -> np.ndarray:
        return random_policy_act(state, self.rng, self.config)


class TablePolicy:
    """Deterministic policy given as one action index per encoded state."""

    name = "table"

    def __init__(self, actions: np.ndarray, config: EnvConfig):
        self.actions = np.asarray(actions, dtype=np.int64)
        self.config = config

    def act(self, state) -> np.ndarray:
        return decode_action(self.actions[encode_state(state, self.config)], self.config)


# ---------------------------------------------------------------------------
# Exact model

def expected_step_reward(states, actions, config: EnvConfig):
    """Mean one-step reward: the utility term uses the success probability."""
    s = np.asarray(states)
    a = np.asarray(actions)
    p = success_probability(a[..., CHANNEL], s[..., E], s[..., X], config)
    utility = config.utility_delta * p
    c_cost = config.array("channel_cost")[a[..., CHANNEL]]
    e_cost = energy_cost(s[..., X], np.arange(config.num_workers), a[..., RECHARGE], config)
    u, c, e = reward_terms(utility, c_cost, e_cost, config)
    return u - c - e


def worker_kernel(config: EnvConfig, worker: int) -> tuple[np.ndarray, np.ndarray]:
    """Transition tensor ``(ds, da, ds')`` and mean reward ``(ds, da)`` of one worker.

    Indices are per-worker digits of the state and action codecs.  The
    reward is this worker's share of the normalized, scaled sum.
    """
    emax = config.max_energy
    ns, na = worker_state_radix(config), worker_action_radix(config)
    P = np.zeros((ns, na, ns))
    R = np.zeros((ns, na))
    p_two = config.p_energy_two[worker]
    q = config.p_in_coverage[worker]
    mu = config.recharge_weight[worker]
    for ds in range(ns):
        x, rest = ds % 2, ds // 2
        e, w = rest % (emax + 1), rest // (emax + 1)
        for da in range(na):
            ch, rc = divmod(da, emax + 1)
            p = float(success_probability(ch, e, x, config))
            drain = [(e - 2, p_two), (e - 1, 1.0 - p_two)] if e >= 2 else [(0, 1.0)]
            for e_mid, pe in drain:
                e_next = min(e_mid + rc, emax)
                for w_next, pw in ((0, 1.0 - p), (1, p)):
                    for x_next, px in ((0, 1.0 - q), (1, q)):
                        P[ds, da, (w_next * (emax + 1) + e_next) * 2 + x_next] += pe * pw * px
            e_cost = (mu if x == 1 else config.recharge_weight_out) * rc
            u, c, ec = reward_terms(np.array([config.utility_delta * p]),
                                    np.array([config.array("channel_cost")[ch]]),
                                    np.array([e_cost]), config)
            R[ds, da] = u - c - ec
    return P, R


@dataclass
class ExactMdp:
    """Dense kernel ``P[s, a, s']`` and mean reward ``R[s, a]`` over encoded indices."""

    P: np.ndarray
    R: np.ndarray
    config: EnvConfig

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]


def build_exact_mdp(config: EnvConfig, max_pairs: int = MAX_PAIRS) -> ExactMdp:
    """Enumerate the full MDP by multiplying independent per-worker kernels."""
    S, A = state_space_size(config), action_space_size(config)
    if S * A > max_pairs:
        raise ValueError(f"{S} states x {A} actions exceeds the enumeration guard of {max_pairs} pairs")
    P, R = worker_kernel(config, 0)
    for l in range(1, config.num_workers):
        Pl, Rl = worker_kernel(config, l)
        s0, a0 = R.shape
        s1, a1 = Rl.shape
        # Worker 1 is the most significant digit, so earlier workers vary slowest.
        P = (P[:, None, :, None, :, None] * Pl[None, :, None, :, None, :]).reshape(s0 * s1, a0 * a1, s0 * s1)
        R = (R[:, None, :, None] + Rl[None, :, None, :]).reshape(s0 * s1, a0 * a1)
    return ExactMdp(P, R, config)


class ValueIterationResult(NamedTuple):
    q: np.ndarray
    v: np.ndarray
    policy: np.ndarray
    sweeps: int
    residual: float
    residuals: np.ndarray


def value_iteration(mdp: ExactMdp, gamma: float, tol: float = 1e-8,
                    max_sweeps: int = 10**5) -> ValueIterationResult:
    """Synchronous Bellman-optimality sweeps until the sup-norm change drops below ``tol``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    S, A = mdp.R.shape
    flat = mdp.P.reshape(S * A, S)
    q = mdp.R.copy()
    residuals = []
    for sweep in range(1, max_sweeps + 1):
        q_new = mdp.R + gamma * (flat @ q.max(axis=1)).reshape(S, A)
        residual = float(np.max(np.abs(q_new - q)))
        residuals.append(residual)
        q = q_new
        if residual < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge in {max_sweeps} sweeps")
    return ValueIterationResult(q, q.max(axis=1), np.argmax(q, axis=1), sweep, residual,
                                np.asarray(residuals))


def save_q_csv(q: np.ndarray, path: str | Path) -> None:
    """Write ``state,action,q`` rows for every pair."""
    S, A = q.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "action", "q"])
        for s in range(S):
            for a in range(A):
                writer.writerow([s, a, repr(float(q[s, a]))])


def policy_expected_rewards(config: EnvConfig, policy_actions: np.ndarray) -> np.ndarray:
    """Mean one-step reward in every state under a state-indexed deterministic policy."""
    states = all_states(config)
    return expected_step_reward(states, decode_action(policy_actions, config), config)

