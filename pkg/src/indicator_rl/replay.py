"""Episode replay buffer with three-way goal relabeling and Q-threshold filtering."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import RewardConstants, Transition, obs_equal


class EmptyBufferError(RuntimeError):
    pass


class RaggedEpisodeError(ValueError):
    pass


class Branch(enum.IntEnum):
    ACHIEVED = 0
    FUTURE = 1
    ORIGINAL = 2


@dataclass(frozen=True)
class RelabelConfig:
    p1: float = 0.45
    p2: float = 0.45
    p3: float = 0.1
    capacity: int = 10**6
    batch_size: int = 256

    def __post_init__(self):
        probs = (self.p1, self.p2, self.p3)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"relabel probabilities must be >= 0 and sum to 1, got {probs}")
        if not self.capacity >= self.batch_size >= 1:
            raise ValueError("need capacity >= batch_size >= 1")


@dataclass(frozen=True)
class FilterConfig:
    q0: float
    enabled: bool = True
    r_plus: float = 1.0

    @classmethod
    def from_constants(cls, c: RewardConstants, enabled: bool = True) -> "FilterConfig":
        return cls(q0=derive_q0(c), enabled=enabled, r_plus=c.r_plus)


def derive_q0(c: RewardConstants) -> float:
    """Midpoint of ``(R- + g R+ / (1 - g), R+ / (1 - g))``."""
    if not 0.0 < c.gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    best_negative = c.r_minus + c.gamma * c.r_plus / (1.0 - c.gamma)
    return 0.5 * (best_negative + c.r_plus / (1.0 - c.gamma))


@dataclass(frozen=True)
class RelabeledSample:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    goal_obs: np.ndarray
    reward: float
    branch: Branch
    goal_state: np.ndarray


@dataclass
class RelabeledBatch:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    goal_obs: np.ndarray
    reward: np.ndarray
    branch: np.ndarray
    t: np.ndarray
    fallback: np.ndarray
    # diagnostics only
    next_state: np.ndarray
    goal_state: np.ndarray

    def __len__(self):
        return int(self.reward.shape[0])

    def __getitem__(self, i) -> RelabeledSample:
        return RelabeledSample(self.obs[i], self.action[i], self.next_obs[i], self.goal_obs[i],
                               float(self.reward[i]), Branch(int(self.branch[i])), self.goal_state[i])

    def subset(self, mask) -> "RelabeledBatch":
        return RelabeledBatch(**{name: getattr(self, name)[mask] for name in self.__dataclass_fields__})


class ReplayBuffer:
    """Ring buffer of complete, fixed-length episodes.

    Capacity is counted in transitions; whole episodes are evicted oldest
    first. Storage grows geometrically up to capacity so that a large nominal
    capacity costs nothing until it is used.

    Single writer. Sampling while no write is in progress is safe.
    """

    def __init__(self, capacity: int, horizon: int, obs_dim: int, state_dim: int, action_dim: int):
        if capacity < horizon:
            raise ValueError("capacity must hold at least one episode")
        self.capacity = int(capacity)
        self.horizon = int(horizon)
        self.max_episodes = self.capacity // self.horizon
        self._dims = (obs_dim, state_dim, action_dim)
        self._alloc = 0
        self._next = 0
        self.n_episodes = 0
        self.episodes_stored = 0
        self._grow(min(self.max_episodes, 64))

    def _grow(self, size: int) -> None:
        obs_dim, state_dim, action_dim = self._dims
        T = self.horizon
        fresh = {
            "obs": np.zeros((size, T + 1, obs_dim)),
            "states": np.zeros((size, T + 1, state_dim)),
            "actions": np.zeros((size, T, action_dim)),
            "goal_obs": np.zeros((size, obs_dim)),
            "goal_state": np.zeros((size, state_dim)),
        }
        for key, arr in fresh.items():
            if self._alloc:
                arr[: self._alloc] = getattr(self, "_" + key)
            setattr(self, "_" + key, arr)
        self._alloc = size

    def __len__(self):
        return self.n_episodes * self.horizon

    @property
    def n_transitions(self) -> int:
        return len(self)

    def store_episode(self, episode: Sequence[Transition]) -> None:
        T = self.horizon
        if len(episode) != T:
            raise RaggedEpisodeError(f"episode has {len(episode)} transitions, expected {T}")
        first = episode[0]
        for t, tr in enumerate(episode):
            if tr.t != t:
                raise RaggedEpisodeError(f"transition {t} carries index {tr.t}")
            if not obs_equal(tr.goal_obs, first.goal_obs):
                raise RaggedEpisodeError("transitions of one episode must share a goal")
            if t + 1 < T and not obs_equal(tr.next_obs, episode[t + 1].obs):
                raise RaggedEpisodeError(f"episode is not contiguous at step {t}")
        self.store_arrays(
            obs=np.stack([tr.obs for tr in episode] + [episode[-1].next_obs]),
            states=np.stack([tr.state for tr in episode] + [episode[-1].next_state]),
            actions=np.stack([tr.action for tr in episode]),
            goal_obs=first.goal_obs,
            goal_state=first.goal_state,
        )

    def store_arrays(self, obs, states, actions, goal_obs, goal_state) -> None:
        T = self.horizon
        if obs.shape[0] != T + 1 or states.shape[0] != T + 1 or actions.shape[0] != T:
            raise RaggedEpisodeError("episode arrays do not match the horizon")
        if self._next >= self._alloc:
            self._grow(min(self.max_episodes, 2 * self._alloc))
        i = self._next
        self._obs[i] = obs
        self._states[i] = states
        self._actions[i] = actions
        self._goal_obs[i] = goal_obs
        self._goal_state[i] = goal_state
        self._next = (i + 1) % self.max_episodes
        self.n_episodes = min(self.n_episodes + 1, self.max_episodes)
        self.episodes_stored += 1

    def _slot(self, episode_rank):
        """Storage slot of the ``episode_rank``-th oldest stored episode."""
        oldest = self._next - self.n_episodes if self.n_episodes == self.max_episodes else 0
        return (np.asarray(episode_rank) + oldest) % self.max_episodes

    def get_transition(self, i: int) -> Transition:
        """The ``i``-th stored transition, oldest first."""
        if not 0 <= i < len(self):
            raise IndexError(i)
        ep, t = divmod(i, self.horizon)
        s = int(self._slot(ep))
        return Transition(
            obs=self._obs[s, t], action=self._actions[s, t], next_obs=self._obs[s, t + 1],
            goal_obs=self._goal_obs[s], t=t, state=self._states[s, t],
            next_state=self._states[s, t + 1], goal_state=self._goal_state[s],
        )

    def all_observations(self) -> np.ndarray:
        slots = self._slot(np.arange(self.n_episodes))
        return self._obs[slots].reshape(-1, self._dims[0])

    def sample_relabeled(self, cfg: RelabelConfig, reward_fn, rng: np.random.Generator) -> RelabeledBatch:
        """Draw ``cfg.batch_size`` transitions uniformly and relabel each goal.

        Per sample one branch is drawn: achieved (goal := next observation),
        future (goal := observation at a uniform index in ``{t+2, ..., T}``) or
        original. The future branch falls back to achieved at ``t = T - 1``.
        """
        if self.n_episodes == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        T, B = self.horizon, cfg.batch_size
        flat = rng.integers(self.n_episodes * T, size=B)
        ep, t = np.divmod(flat, T)
        slot = self._slot(ep)
        u = rng.random(B)
        offset_draw = rng.random(B)

        branch = np.where(u < cfg.p1, Branch.ACHIEVED,
                          np.where(u < cfg.p1 + cfg.p2, Branch.FUTURE, Branch.ORIGINAL)).astype(np.int8)
        n_future = T - t - 1  # size of {t+2, ..., T}
        fallback = (branch == Branch.FUTURE) & (n_future <= 0)
        branch[fallback] = Branch.ACHIEVED
        future_t = np.minimum(t + 2 + np.floor(offset_draw * np.maximum(n_future, 1)).astype(np.int64), T)

        obs = self._obs[slot, t]
        next_obs = self._obs[slot, t + 1]
        next_state = self._states[slot, t + 1]
        goal_obs = self._goal_obs[slot].copy()
        goal_state = self._goal_state[slot].copy()

        fut = branch == Branch.FUTURE
        goal_obs[fut] = self._obs[slot[fut], future_t[fut]]
        goal_state[fut] = self._states[slot[fut], future_t[fut]]
        ach = branch == Branch.ACHIEVED
        goal_obs[ach] = next_obs[ach]
        goal_state[ach] = next_state[ach]

        reward = np.asarray(reward_fn(next_obs, goal_obs, next_state, goal_state), dtype=np.float64)
        # the achieved branch is positive by construction, never through a noisy evaluation
        reward = np.where(ach, reward_fn.c.r_plus, reward)
        return RelabeledBatch(obs=obs, action=self._actions[slot, t], next_obs=next_obs,
                              goal_obs=goal_obs, reward=reward, branch=branch, t=t,
                              fallback=fallback, next_state=next_state, goal_state=goal_state)


def sample_relabeled(buffer: ReplayBuffer, cfg: RelabelConfig, reward_fn, rng) -> RelabeledBatch:
    return buffer.sample_relabeled(cfg, reward_fn, rng)


CriticFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def filter_mask(batch: RelabeledBatch, critic: CriticFn, f: FilterConfig, q=None) -> np.ndarray:
    """Boolean keep-mask. ``q`` may be passed when critic values are already known."""
    if not f.enabled or len(batch) == 0:
        return np.ones(len(batch), dtype=bool)
    if q is None:
        q = np.asarray(critic(batch.obs, batch.action, batch.goal_obs), dtype=np.float64).reshape(-1)
    negative = batch.reward < f.r_plus
    return ~(negative & (q > f.q0))


def filter_batch(batch: RelabeledBatch, critic: CriticFn, f: FilterConfig) -> RelabeledBatch:
    if not f.enabled:
        return batch
    return batch.subset(filter_mask(batch, critic, f))
