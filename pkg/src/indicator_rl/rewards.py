"""Reward functions and reward-quality diagnostics.

Scalar functions (``true_reward``, ``indicator_reward``, ``flip_reward``)
mirror the batch reward objects used by the replay sampler. A batch reward
object is called as ``fn(next_obs, goal_obs, next_state, goal_state)`` on
``(n, d)`` arrays and returns an ``(n,)`` array of rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RewardConstants, obs_equal, rows_equal

DEFAULT_CONSTANTS = RewardConstants()


class DiagnosticsUnavailableError(ValueError):
    pass


@dataclass(frozen=True)
class FlipConfig:
    p_fp: float = 0.0
    p_fn: float = 0.0

    def __post_init__(self):
        for p in (self.p_fp, self.p_fn):
            if not 0.0 <= p <= 1.0:
                raise ValueError("flip probabilities must lie in [0, 1]")
        if self.p_fp > 0 and self.p_fn > 0:
            raise ValueError("only one of p_fp / p_fn may be nonzero")


def true_reward(next_state, goal_state, env, c: RewardConstants) -> float:
    return c.r_plus if env.true_success(next_state, goal_state) else c.r_minus


def indicator_reward(next_obs, goal_obs, c: RewardConstants) -> float:
    return c.r_plus if obs_equal(next_obs, goal_obs) else c.r_minus


def flip_reward(r: float, truth_is_positive: bool, cfg: FlipConfig, rng: np.random.Generator,
                c: RewardConstants = DEFAULT_CONSTANTS) -> float:
    draw = rng.random()
    if truth_is_positive and draw < cfg.p_fn:
        return c.r_minus
    if not truth_is_positive and draw < cfg.p_fp:
        return c.r_plus
    return r


class IndicatorReward:
    """Positive only when the next observation is bit-identical to the goal."""

    uses_state = False

    def __init__(self, c: RewardConstants):
        self.c = c

    def __call__(self, next_obs, goal_obs, next_state=None, goal_state=None):
        hit = rows_equal(np.atleast_2d(next_obs), np.atleast_2d(goal_obs))
        return np.where(hit, self.c.r_plus, self.c.r_minus)


class OracleReward:
    """Ground-truth epsilon-ball reward computed from hidden states."""

    uses_state = True

    def __init__(self, env, c: RewardConstants):
        self.env = env
        self.c = c

    def __call__(self, next_obs, goal_obs, next_state, goal_state):
        hit = self.env.success_batch(next_state, goal_state)
        return np.where(hit, self.c.r_plus, self.c.r_minus)


class FlippedReward:
    """Oracle reward with i.i.d. false-positive or false-negative flips."""

    uses_state = True

    def __init__(self, env, c: RewardConstants, cfg: FlipConfig, rng: np.random.Generator):
        self.base = OracleReward(env, c)
        self.c = c
        self.cfg = cfg
        self.rng = rng

    def __call__(self, next_obs, goal_obs, next_state, goal_state):
        r = self.base(next_obs, goal_obs, next_state, goal_state)
        positive = r == self.c.r_plus
        draw = self.rng.random(r.shape[0])
        r = np.where(positive & (draw < self.cfg.p_fn), self.c.r_minus, r)
        return np.where(~positive & (draw < self.cfg.p_fp), self.c.r_plus, r)


@dataclass(frozen=True)
class RewardDiagnostics:
    """Reward quality of a batch relative to the ground-truth reward.

    ``fn_rate`` is the fraction of truly positive entries that were assigned
    a negative reward; ``fp_rate`` the fraction of truly negative entries that
    were assigned a positive one.
    """

    fn_rate: float
    fp_rate: float
    accuracy: float
    positive_fraction: float
    n: int = 0
    true_positives: int = 0
    false_negatives: int = 0
    false_positives: int = 0
    assigned_positives: int = 0

    @classmethod
    def from_counts(cls, n, true_positives, false_negatives, false_positives, assigned_positives):
        true_negatives = n - true_positives
        if n == 0:
            return cls(0.0, 0.0, 1.0, 0.0)
        return cls(
            fn_rate=false_negatives / true_positives if true_positives else 0.0,
            fp_rate=false_positives / true_negatives if true_negatives else 0.0,
            accuracy=1.0 - (false_negatives + false_positives) / n,
            positive_fraction=assigned_positives / n,
            n=n,
            true_positives=true_positives,
            false_negatives=false_negatives,
            false_positives=false_positives,
            assigned_positives=assigned_positives,
        )

    def merge(self, other: "RewardDiagnostics") -> "RewardDiagnostics":
        return RewardDiagnostics.from_counts(
            self.n + other.n,
            self.true_positives + other.true_positives,
            self.false_negatives + other.false_negatives,
            self.false_positives + other.false_positives,
            self.assigned_positives + other.assigned_positives,
        )


def diagnose_batch(rewards, next_states, goal_states, env, c: RewardConstants) -> RewardDiagnostics:
    """Compare assigned (relabeled) rewards with the ground-truth reward."""
    if next_states is None or goal_states is None:
        raise DiagnosticsUnavailableError("ground-truth states are required for diagnostics")
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    truth = env.success_batch(next_states, goal_states)
    if truth.shape[0] != rewards.shape[0]:
        raise ValueError("rewards and states disagree in batch size")
    assigned = rewards == c.r_plus
    return RewardDiagnostics.from_counts(
        n=int(rewards.shape[0]),
        true_positives=int(truth.sum()),
        false_negatives=int((truth & ~assigned).sum()),
        false_positives=int((~truth & assigned).sum()),
        assigned_positives=int(assigned.sum()),
    )
