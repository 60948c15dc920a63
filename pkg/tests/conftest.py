import numpy as np
import pytest

from indicator_rl.core import Transition
from indicator_rl.replay import ReplayBuffer


def rollout(env, rng, actions=None):
    """One full episode of uniform random (or given) actions as Transitions."""
    state, obs, goal = env.reset(rng)
    episode = []
    for t in range(env.spec.horizon_T):
        a = actions[t] if actions is not None else rng.uniform(-1, 1, env.spec.action_dim)
        new_state, next_obs = env.step(state, a)
        episode.append(Transition(obs, a, next_obs, goal.goal_obs, t, state.ground_truth,
                                  new_state.ground_truth, goal.goal_state))
        state, obs = new_state, next_obs
    return episode


def filled_buffer(env, n_episodes, seed=0, capacity=None):
    spec = env.spec
    buf = ReplayBuffer(capacity or n_episodes * spec.horizon_T, spec.horizon_T, spec.obs_dim,
                       spec.state_dim, spec.action_dim)
    rng = np.random.default_rng(seed)
    for _ in range(n_episodes):
        buf.store_episode(rollout(env, rng))
    return buf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
