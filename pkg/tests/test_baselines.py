import numpy as np
import pytest
from scipy import stats

from conftest import binomial_sigma
from flnet.baselines import (ExactMdp, GreedyPolicy, Policy, RandomPolicy, TablePolicy,
                             build_exact_mdp, expected_step_reward, greedy_policy_act,
                             random_policy_act, save_q_csv, value_iteration)
from flnet.config import default_config
from flnet.env import (all_actions, all_states, decode_state, encode_state, state_space_size,
                       step_batch)


def test_greedy_is_most_expensive_channel_full_recharge(cfg):
    assert greedy_policy_act(np.zeros((3, 3), int), cfg).tolist() == [[3, 3]] * 3


def test_greedy_two_channels():
    cfg = default_config().replace(num_channels=2, channel_cost=[2.0], p_success_special=[0.95])
    assert greedy_policy_act(None, cfg)[:, 0].tolist() == [2, 2, 2]


def test_greedy_ignores_state(cfg):
    rng = np.random.default_rng(0)
    ref = greedy_policy_act(decode_state(0, cfg), cfg)
    for idx in rng.integers(0, state_space_size(cfg), size=100):
        assert np.array_equal(greedy_policy_act(decode_state(int(idx), cfg), cfg), ref)


def test_random_channel_marginals_uniform(cfg):
    rng = np.random.default_rng(1)
    draws = np.stack([random_policy_act(None, rng, cfg) for _ in range(100_000 // 3 + 1)])
    channels = draws[:, :, 0].ravel()[:100_000]
    counts = np.bincount(channels, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.001
    assert np.all(np.abs(counts / 1e5 - 0.25) <= 3 * binomial_sigma(0.25, 100_000))
    recharge = np.bincount(draws[:, :, 1].ravel()[:100_000], minlength=4)
    assert stats.chisquare(recharge).pvalue > 0.001


def test_random_policy_reproducible(cfg):
    a, b = RandomPolicy(cfg, 5), RandomPolicy(cfg, 5)
    assert all(np.array_equal(a.act(None), b.act(None)) for _ in range(50))


def test_random_policy_without_recharge_option():
    # Smallest legal action set per worker: channels {0, 1, 2}, recharge {0}.
    cfg = default_config(1).replace(num_channels=2, channel_cost=[2.0], p_success_special=[0.95],
                                    max_energy=0)
    rng = np.random.default_rng(0)
    acts = np.stack([random_policy_act(None, rng, cfg) for _ in range(300)])
    assert set(acts[:, 0, 1].tolist()) == {0}
    assert set(acts[:, 0, 0].tolist()) == {0, 1, 2}


def test_policies_satisfy_protocol(cfg):
    assert isinstance(GreedyPolicy(cfg), Policy)
    assert isinstance(RandomPolicy(cfg, 0), Policy)
    assert isinstance(TablePolicy(np.zeros(16, int), default_config(1)), Policy)


def test_exact_mdp_rows_sum_to_one(cfg1):
    mdp = build_exact_mdp(cfg1)
    assert mdp.P.shape == (16, 16, 16)
    assert np.max(np.abs(mdp.P.sum(axis=2) - 1.0)) < 1e-10
    assert np.all(mdp.P >= 0)


def test_exact_mdp_two_workers_rows_and_rewards():
    cfg = default_config(2)
    mdp = build_exact_mdp(cfg)
    assert mdp.P.shape == (256, 256, 256)
    assert np.max(np.abs(mdp.P.sum(axis=2) - 1.0)) < 1e-10
    lo, hi = cfg.reward_bounds
    assert np.all((mdp.R >= lo) & (mdp.R <= hi))
    # Mean reward agrees with the direct formula on the joint state/action grid.
    S, A = all_states(cfg), all_actions(cfg)
    direct = expected_step_reward(S[:, None], A[None, :], cfg)
    assert np.allclose(mdp.R, direct)


def test_exact_mdp_degenerate_kernel_is_deterministic():
    cfg = default_config(1).replace(p_success_default=1.0, p_success_special=[1.0, 1.0],
                                    p_in_coverage=[1.0], p_energy_two=[1.0])
    P = build_exact_mdp(cfg).P
    assert set(np.unique(P).tolist()) <= {0.0, 1.0}
    assert np.all(P.sum(axis=2) == 1.0)


def test_exact_mdp_size_guard(cfg):
    with pytest.raises(ValueError):
        build_exact_mdp(cfg)
    with pytest.raises(ValueError):
        build_exact_mdp(default_config(2), max_pairs=1000)


@pytest.mark.parametrize("s_worker, a_worker", [((0, 3, 1), (1, 0)), ((1, 2, 0), (2, 1)),
                                                ((0, 1, 1), (3, 3)), ((1, 0, 0), (0, 2))])
def test_kernel_matches_simulation(cfg1, s_worker, a_worker):
    n = 100_000
    P = build_exact_mdp(cfg1).P
    s_idx = encode_state([s_worker], cfg1)
    a_idx = (a_worker[0]) * (cfg1.max_energy + 1) + a_worker[1]
    out = step_batch(np.tile([s_worker], (n, 1, 1)), np.tile([a_worker], (n, 1, 1)),
                     np.random.default_rng(s_idx * 16 + a_idx), cfg1)
    freq = np.bincount(encode_state(out.next_state, cfg1), minlength=16) / n
    p = P[s_idx, a_idx]
    assert np.all(np.abs(freq - p) <= 3 * binomial_sigma(p, n) + 1e-12)


def test_value_iteration_zero_discount_returns_rewards(cfg1):
    mdp = build_exact_mdp(cfg1)
    res = value_iteration(mdp, 0.0)
    assert np.array_equal(res.q, mdp.R)


def test_value_iteration_geometric_series():
    mdp = ExactMdp(np.ones((1, 1, 1)), np.ones((1, 1)), None)
    res = value_iteration(mdp, 0.9, tol=1e-12)
    assert res.v[0] == pytest.approx(10.0, abs=1e-9)


def test_value_iteration_contraction_and_certificate(cfg1):
    res = value_iteration(build_exact_mdp(cfg1), 0.9)
    r = res.residuals
    assert np.all(r[1:] <= 0.9 * r[:-1] + 1e-12)
    assert res.residual < 1e-8
    # Bellman residual of the returned fixed point.
    mdp = build_exact_mdp(cfg1)
    backup = mdp.R + 0.9 * np.einsum("sat,t->sa", mdp.P, res.q.max(axis=1))
    assert np.max(np.abs(backup - res.q)) < 1e-7


def test_value_iteration_rejects_bad_gamma(cfg1):
    with pytest.raises(ValueError):
        value_iteration(build_exact_mdp(cfg1), 1.0)
    with pytest.raises(RuntimeError):
        value_iteration(build_exact_mdp(cfg1), 0.9, tol=0.0, max_sweeps=5)


def test_value_iteration_policy_tie_break():
    # Two equal actions: the lowest index wins.
    mdp = ExactMdp(np.ones((1, 2, 1)), np.array([[1.0, 1.0]]), None)
    assert value_iteration(mdp, 0.5).policy.tolist() == [0]


def test_oracle_uses_special_channel_out_of_coverage(cfg1):
    res = value_iteration(build_exact_mdp(cfg1), 0.9)
    emax = cfg1.max_energy
    for e in range(1, emax + 1):
        a = res.policy[encode_state([(0, e, 0)], cfg1)]
        assert a // (emax + 1) == 2


def test_greedy_expected_reward_matches_simulation(cfg):
    n = 100_000
    rng = np.random.default_rng(3)
    states = np.stack([decode_state(int(i), cfg) for i in rng.integers(0, 4096, size=50)])
    act = greedy_policy_act(None, cfg)
    for s in states[:5]:
        exp = expected_step_reward(s, act, cfg)
        out = step_batch(np.tile(s, (n, 1, 1)), np.tile(act, (n, 1, 1)), rng, cfg)
        assert abs(out.reward.mean() - exp) <= 3 * out.reward.std() / np.sqrt(n)


def test_save_q_csv(tmp_path):
    path = tmp_path / "q.csv"
    save_q_csv(np.array([[1.5, -2.0]]), path)
    assert path.read_text().splitlines() == ["state,action,q", "0,0,1.5", "0,1,-2.0"]
