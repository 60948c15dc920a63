import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import filled_buffer, rollout
from indicator_rl.core import RewardConstants, obs_equal
from indicator_rl.envs import PointReach, make_env
from indicator_rl.replay import (
    Branch,
    EmptyBufferError,
    FilterConfig,
    RaggedEpisodeError,
    RelabelConfig,
    ReplayBuffer,
    derive_q0,
    filter_batch,
    filter_mask,
)
from indicator_rl.rewards import IndicatorReward, OracleReward

C = RewardConstants(epsilon=0.01)


def test_eviction_keeps_newest_episodes():
    env = PointReach(dim=2)
    buf = ReplayBuffer(100, 50, 2, 2, 2)
    rng = np.random.default_rng(0)
    episodes = [rollout(env, rng) for _ in range(3)]
    for ep in episodes:
        buf.store_episode(ep)
    assert buf.n_episodes == 2 and len(buf) == 100
    assert obs_equal(buf.get_transition(0).obs, episodes[1][0].obs)
    assert obs_equal(buf.get_transition(99).next_obs, episodes[2][-1].next_obs)


def test_round_trip_of_stored_transition():
    env = make_env("TwoLinkReacher")
    buf = ReplayBuffer(1000, 50, 6, 2, 2)
    ep = rollout(env, np.random.default_rng(2))
    buf.store_episode(ep)
    for t in (0, 17, 49):
        got = buf.get_transition(t)
        assert obs_equal(got.obs, ep[t].obs) and obs_equal(got.next_obs, ep[t].next_obs)
        assert np.array_equal(got.action, ep[t].action) and got.t == t


def test_large_capacity_no_early_eviction():
    buf = ReplayBuffer(10**6, 50, 2, 2, 2)
    assert buf.max_episodes == 20_000
    obs = np.zeros((51, 2))
    for i in range(20_000):
        buf.store_arrays(obs, obs, np.zeros((50, 2)), obs[0], obs[0])
    assert buf.n_episodes == 20_000 and buf.episodes_stored == 20_000
    buf.store_arrays(obs, obs, np.zeros((50, 2)), obs[0], obs[0])
    assert buf.n_episodes == 20_000


def test_ragged_episode_rejected():
    env = PointReach(dim=2)
    buf = ReplayBuffer(1000, 50, 2, 2, 2)
    ep = rollout(env, np.random.default_rng(0))
    with pytest.raises(RaggedEpisodeError):
        buf.store_episode(ep[:-1])
    with pytest.raises(RaggedEpisodeError):
        buf.store_episode(ep[:10] + ep[11:] + ep[-1:])


def test_empty_buffer_sampling_raises():
    buf = ReplayBuffer(1000, 50, 2, 2, 2)
    with pytest.raises(EmptyBufferError):
        buf.sample_relabeled(RelabelConfig(), IndicatorReward(C), np.random.default_rng(0))


def test_forced_achieved_branch():
    buf = filled_buffer(PointReach(dim=2), 3)
    b = buf.sample_relabeled(RelabelConfig(1, 0, 0, batch_size=500), IndicatorReward(C), np.random.default_rng(0))
    assert np.all(b.reward == 1.0)
    assert np.all(b.branch == Branch.ACHIEVED)
    assert all(obs_equal(g, n) for g, n in zip(b.goal_obs, b.next_obs))


def test_branch_frequencies():
    buf = filled_buffer(PointReach(dim=2), 10)
    cfg = RelabelConfig(0.45, 0.45, 0.1, batch_size=100_000)
    b = buf.sample_relabeled(cfg, IndicatorReward(C), np.random.default_rng(5))
    # undo fallback so frequencies reflect the configured draw
    drawn = b.branch.copy()
    drawn[b.fallback] = Branch.FUTURE
    for branch, p in zip(Branch, (0.45, 0.45, 0.1)):
        assert abs(np.mean(drawn == branch) - p) < 0.005


def test_last_step_falls_back_to_achieved():
    buf = filled_buffer(PointReach(dim=2), 5)
    b = buf.sample_relabeled(RelabelConfig(0, 1, 0, batch_size=5000), IndicatorReward(C), np.random.default_rng(1))
    last = b.t == 49
    assert last.any()
    assert np.all(b.fallback == last)
    assert np.all(b.reward[last] == 1.0)
    assert np.all(b.branch[last] == Branch.ACHIEVED)


def test_future_goal_is_at_least_two_steps_ahead():
    env = make_env("GridGoalWorld", n=4)
    buf = ReplayBuffer(16 * 20, 16, 16, 2, 2)
    rng = np.random.default_rng(0)
    episodes = [rollout(env, rng) for _ in range(20)]
    for ep in episodes:
        buf.store_episode(ep)
    b = buf.sample_relabeled(RelabelConfig(0, 1, 0, batch_size=4000), IndicatorReward(C), np.random.default_rng(2))
    fut = b.branch == Branch.FUTURE
    assert fut.any()
    # the future goal state must be one of the episode states at indices t+2..T
    flat = np.random.default_rng(2).integers(20 * 16, size=4000)
    for i in np.flatnonzero(fut)[:500]:
        ep, t = divmod(int(flat[i]), 16)
        states = [tr.next_state for tr in episodes[ep]]  # states[k] is s_{k+1}
        candidates = states[t + 1:]
        assert any(np.array_equal(b.goal_state[i], s) for s in candidates)


def test_future_offsets_are_uniform():
    buf = filled_buffer(PointReach(dim=2), 4)
    rng = np.random.default_rng(3)
    b = buf.sample_relabeled(RelabelConfig(0, 1, 0, batch_size=200_000), IndicatorReward(C), rng)
    sel = (b.t == 10) & (b.branch == Branch.FUTURE)
    # with continuous states the future index is recovered through the state match
    counts = np.zeros(51)
    flat = np.random.default_rng(3).integers(4 * 50, size=200_000)
    for i in np.flatnonzero(sel):
        ep = int(flat[i]) // 50
        all_states = np.stack([buf.get_transition(ep * 50 + k).state for k in range(50)]
                              + [buf.get_transition(ep * 50 + 49).next_state])
        k = int(np.flatnonzero(np.all(all_states == b.goal_state[i], axis=1))[0])
        counts[k] += 1
    assert counts[:12].sum() == 0
    observed = counts[12:]
    expected = observed.sum() / observed.size
    assert np.all(np.abs(observed - expected) < 5 * np.sqrt(expected))


def test_transition_sampling_is_uniform():
    # observations encode (episode, t) so every sampled row identifies its transition
    buf = ReplayBuffer(100, 10, 2, 2, 2)
    for ep in range(10):
        obs = np.stack([np.full(11, float(ep)), np.arange(11.0)], axis=1)
        buf.store_arrays(obs, obs, np.zeros((10, 2)), obs[0], obs[0])
    rng = np.random.default_rng(0)
    counts = np.zeros(100)
    for _ in range(10):
        b = buf.sample_relabeled(RelabelConfig(0, 0, 1, batch_size=100_000), IndicatorReward(C), rng)
        idx = (b.obs[:, 0] * 10 + b.obs[:, 1]).astype(int)
        counts += np.bincount(idx, minlength=100)
    freq = counts / counts.sum()
    # total-variation distance from uniform
    assert 0.5 * np.abs(freq - 0.01).sum() < 0.01


def test_derive_q0_values():
    assert derive_q0(RewardConstants(gamma=0.98)) == pytest.approx(49.0)
    assert derive_q0(RewardConstants(gamma=0.96)) == pytest.approx(24.0)


@given(st.floats(0.01, 0.999), st.floats(0.1, 5.0), st.floats(-5.0, 0.0))
def test_q0_strictly_inside_interval(gamma, r_plus, r_minus):
    c = RewardConstants(r_plus=r_plus, r_minus=r_minus, gamma=gamma)
    q0 = derive_q0(c)
    assert r_minus + gamma * r_plus / (1 - gamma) < q0 < r_plus / (1 - gamma)


def _batch(seed=0):
    buf = filled_buffer(PointReach(dim=2), 4, seed=seed)
    return buf.sample_relabeled(RelabelConfig(batch_size=256), IndicatorReward(C), np.random.default_rng(seed))


def test_disabled_filter_is_identity():
    b = _batch()
    f = FilterConfig(q0=49.0, enabled=False)
    assert filter_batch(b, lambda o, a, g: np.full(len(o), 1e9), f) is b


def test_pessimistic_critic_filters_nothing():
    b = _batch()
    kept = filter_batch(b, lambda o, a, g: np.full(len(o), C.q_min), FilterConfig.from_constants(C))
    assert len(kept) == len(b)


def test_filter_removes_only_confident_negatives():
    b = _batch()
    q = np.linspace(0, 60, len(b))
    mask = filter_mask(b, None, FilterConfig(q0=49.0), q=q)
    assert np.all(mask[b.reward == 1.0])
    assert np.array_equal(~mask, (b.reward == -1.0) & (q > 49.0))
    kept = b.subset(mask)
    assert np.array_equal(kept.t, b.t[mask])  # order preserved


@settings(max_examples=30)
@given(st.floats(0, 60), st.floats(0, 60))
def test_filter_monotone_in_q0(q_a, q_b):
    b = _batch(1)
    q = np.random.default_rng(4).uniform(0, 60, len(b))
    lo, hi = sorted((q_a, q_b))
    removed_lo = (~filter_mask(b, None, FilterConfig(q0=lo), q=q)).sum()
    removed_hi = (~filter_mask(b, None, FilterConfig(q0=hi), q=q)).sum()
    assert removed_hi <= removed_lo


def test_relabel_config_validation():
    with pytest.raises(ValueError):
        RelabelConfig(0.5, 0.5, 0.1)
    with pytest.raises(ValueError):
        RelabelConfig(capacity=10, batch_size=20)


def test_oracle_reward_uses_relabeled_goal_state():
    env = PointReach(dim=2, epsilon=0.01)
    buf = filled_buffer(env, 4)
    b = buf.sample_relabeled(RelabelConfig(0, 0.5, 0.5, batch_size=512), OracleReward(env, C), np.random.default_rng(0))
    expected = np.where(env.success_batch(b.next_state, b.goal_state), 1.0, -1.0)
    assert np.array_equal(b.reward, expected)
