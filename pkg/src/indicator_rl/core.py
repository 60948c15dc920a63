"""Shared value types, reward constants and vector helpers.

Observations, states and actions are plain float64 numpy arrays that are
marked read-only once they enter a :class:`Transition`. Ground-truth state is
carried alongside observations for evaluation, but the learner only ever sees
the :class:`BlindTransition` projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when two vectors that must share a length do not."""


def as_vector(values, *, name: str = "vector") -> np.ndarray:
    """Return a read-only, contiguous float64 copy of ``values``.

    ``-0.0`` is folded onto ``+0.0`` so that the byte encoding is canonical.
    """
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr += 0.0
    arr.flags.writeable = False
    return arr


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    return float(np.linalg.norm(a - b))


def obs_equal(a, b) -> bool:
    """Bit-exact equality of two observations (no tolerance)."""
    a = np.ascontiguousarray(a, dtype=np.float64) + 0.0
    b = np.ascontiguousarray(b, dtype=np.float64) + 0.0
    _check_same_length(a, b)
    return a.tobytes() == b.tobytes()


def rows_equal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise bit-exact equality for two ``(n, d)`` float64 arrays."""
    a = np.ascontiguousarray(a, dtype=np.float64) + 0.0
    b = np.ascontiguousarray(b, dtype=np.float64) + 0.0
    _check_same_length(a, b)
    return np.all(a.view(np.uint64) == b.view(np.uint64), axis=-1)


@dataclass(frozen=True)
class RewardConstants:
    r_plus: float = 1.0
    r_minus: float = -1.0
    gamma: float = 0.98
    epsilon: float = 0.05

    def __post_init__(self):
        if not self.r_plus > self.r_minus:
            raise ValueError("r_plus must exceed r_minus")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def for_horizon(cls, horizon: int, epsilon: float, r_plus: float = 1.0,
                    r_minus: float = -1.0) -> "RewardConstants":
        """Constants with the horizon-derived discount ``(T - 1) / T``."""
        return cls(r_plus=r_plus, r_minus=r_minus,
                   gamma=(horizon - 1) / horizon, epsilon=epsilon)

    @property
    def q_min(self) -> float:
        return self.r_minus / (1.0 - self.gamma)

    @property
    def q_max(self) -> float:
        return self.r_plus / (1.0 - self.gamma)


@dataclass(frozen=True)
class BlindTransition:
    """What the learner is allowed to see of a transition."""

    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    goal_obs: np.ndarray
    t: int


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    goal_obs: np.ndarray
    t: int
    # evaluation / oracle only
    state: np.ndarray
    next_state: np.ndarray
    goal_state: np.ndarray

    def __post_init__(self):
        for name in ("obs", "action", "next_obs", "goal_obs", "state",
                     "next_state", "goal_state"):
            object.__setattr__(self, name, as_vector(getattr(self, name), name=name))
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if np.any(np.abs(self.action) > 1.0):
            raise ValueError("action components must lie in [-1, 1]")
        _check_same_length(self.obs, self.next_obs)
        _check_same_length(self.obs, self.goal_obs)

    def blind(self) -> BlindTransition:
        return BlindTransition(self.obs, self.action, self.next_obs, self.goal_obs, self.t)
