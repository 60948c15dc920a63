"""Desk-scale goal-reaching environments.

Every environment is a stateless object; the mutable part of an episode lives
in the immutable :class:`EnvState` passed through :meth:`GoalEnv.step`. Given
the same generator seed and action sequence, observations are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_vector


class EpisodeExhaustedError(RuntimeError):
    pass


class UnknownEnvironmentError(KeyError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    state_dim: int
    action_dim: int
    horizon_T: int
    epsilon: float
    action_scale: float

    def __post_init__(self):
        if min(self.obs_dim, self.state_dim, self.action_dim) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.horizon_T < 2:
            raise ValueError("horizon must be >= 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class EnvState:
    ground_truth: np.ndarray
    step_count: int = 0


@dataclass(frozen=True)
class GoalSample:
    goal_obs: np.ndarray
    goal_state: np.ndarray


class GoalEnv:
    """Base class. Subclasses set ``spec`` and implement the dynamics hooks."""

    spec: EnvSpec

    # hooks -----------------------------------------------------------
    def sample_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_goal_state(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_state(rng)

    def dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def render(self, state) -> np.ndarray:
        raise NotImplementedError

    def achieved_batch(self, states: np.ndarray) -> np.ndarray:
        """Achieved-goal projection of a ``(n, state_dim)`` array."""
        return np.asarray(states, dtype=np.float64)

    # public API ------------------------------------------------------
    def reset(self, rng: np.random.Generator):
        start = as_vector(self.sample_state(rng), name="state")
        goal_state = as_vector(self.sample_goal_state(rng), name="goal_state")
        goal = GoalSample(goal_obs=self.render(goal_state), goal_state=goal_state)
        return EnvState(start, 0), self.render(start), goal

    def step(self, state: EnvState, action):
        if state.step_count >= self.spec.horizon_T:
            raise EpisodeExhaustedError(
                f"{self.spec.name}: step {state.step_count} >= horizon {self.spec.horizon_T}")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != self.spec.action_dim:
            raise ValueError(f"expected action of length {self.spec.action_dim}")
        if not np.all(np.abs(action) <= 1.0):
            raise ValueError("action components must lie in [-1, 1]")
        new = as_vector(self.dynamics(state.ground_truth, action), name="state")
        return EnvState(new, state.step_count + 1), self.render(new)

    def achieved(self, state) -> np.ndarray:
        return self.achieved_batch(np.asarray(state, dtype=np.float64)[None, :])[0]

    def goal_distance_batch(self, states, goal_states) -> np.ndarray:
        diff = self.achieved_batch(np.atleast_2d(states)) - self.achieved_batch(np.atleast_2d(goal_states))
        return np.linalg.norm(diff, axis=-1)

    def goal_distance(self, state, goal_state) -> float:
        return float(self.goal_distance_batch(state, goal_state)[0])

    def success_batch(self, states, goal_states) -> np.ndarray:
        return self.goal_distance_batch(states, goal_states) <= self.spec.epsilon

    def true_success(self, state, goal_state) -> bool:
        return bool(self.success_batch(state, goal_state)[0])


def _box_clip(position: np.ndarray) -> np.ndarray:
    return np.clip(position, 0.0, 1.0)


class PointReach(GoalEnv):
    """A point moving inside the unit box ``[0, 1]^dim``; observation = position."""

    def __init__(self, dim: int = 2, horizon: int = 50, epsilon: float | None = None,
                 action_scale: float = 0.05):
        if epsilon is None:
            epsilon = 0.01 if dim == 2 else 0.05
        self.spec = EnvSpec(f"PointReach{dim}D", dim, dim, dim, horizon, epsilon, action_scale)

    def sample_state(self, rng):
        return rng.uniform(0.0, 1.0, size=self.spec.state_dim)

    def dynamics(self, state, action):
        return _box_clip(state + self.spec.action_scale * action)

    def render(self, state):
        return as_vector(state, name="observation")


def _wrap_angle(theta):
    return np.mod(theta + math.pi, 2.0 * math.pi) - math.pi


class TwoLinkReacher(GoalEnv):
    """Planar two-link arm with kinematic joint-velocity control.

    State is the joint angle pair; the achieved goal is the fingertip position.
    """

    def __init__(self, link_lengths=(0.1, 0.1), horizon: int = 50, epsilon: float = 0.02,
                 action_scale: float = 0.1):
        self.l1, self.l2 = (float(v) for v in link_lengths)
        self.spec = EnvSpec("TwoLinkReacher", 6, 2, 2, horizon, epsilon, action_scale)

    def sample_state(self, rng):
        return rng.uniform(-math.pi, math.pi, size=2)

    def dynamics(self, state, action):
        return _wrap_angle(state + self.spec.action_scale * action)

    def fingertip(self, angles):
        angles = np.asarray(angles, dtype=np.float64)
        t1, t2 = angles[..., 0], angles[..., 1]
        x = self.l1 * np.cos(t1) + self.l2 * np.cos(t1 + t2)
        y = self.l1 * np.sin(t1) + self.l2 * np.sin(t1 + t2)
        return np.stack([x, y], axis=-1)

    def achieved_batch(self, states):
        return self.fingertip(states)

    def render(self, state):
        t1, t2 = float(state[0]), float(state[1])
        x, y = self.fingertip(np.asarray(state))
        return as_vector([math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), x, y],
                         name="observation")


class PixelReach(PointReach):
    """PointReach2D dynamics observed through a ``k x k`` grayscale blob image."""

    def __init__(self, k: int = 10, sigma_px: float = 1.0, horizon: int = 25,
                 epsilon: float = 0.1, action_scale: float = 0.05):
        super().__init__(dim=2, horizon=horizon, epsilon=epsilon, action_scale=action_scale)
        self.k = int(k)
        self.sigma_px = float(sigma_px)
        self.spec = EnvSpec("PixelReach", self.k * self.k, 2, 2, horizon, epsilon, action_scale)
        self._centers = np.arange(self.k, dtype=np.float64)

    def render(self, state):
        # grid coordinate u maps cell i's center ((i + 0.5) / k) to u = i
        u = float(state[0]) * self.k - 0.5
        v = float(state[1]) * self.k - 0.5
        gx = np.exp(-((self._centers - u) ** 2) / (2.0 * self.sigma_px ** 2))
        gy = np.exp(-((self._centers - v) ** 2) / (2.0 * self.sigma_px ** 2))
        image = np.outer(gy, gx)  # rows index y, columns index x
        levels = np.rint(image * 255.0)
        return as_vector(levels / 255.0, name="observation")


class GridGoalWorld(GoalEnv):
    """``n x n`` grid with moves stay/up/down/left/right; one-hot observations.

    State is ``(row, col)``. Continuous actions ``(dx, dy)`` are discretised:
    ``max(|a|) < 0.5`` means stay, otherwise the dominant axis picks the move.
    """

    MOVES = ("stay", "up", "down", "left", "right")
    # (d_row, d_col) per move index
    DELTAS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
    MOVE_ACTIONS = {
        "stay": (0.0, 0.0),
        "up": (0.0, -1.0),
        "down": (0.0, 1.0),
        "left": (-1.0, 0.0),
        "right": (1.0, 0.0),
    }

    def __init__(self, n: int = 8, horizon: int | None = None):
        self.n = int(n)
        self.spec = EnvSpec(f"GridGoalWorld{self.n}", self.n * self.n, 2, 2,
                            horizon if horizon is not None else 4 * self.n, 0.5, 1.0)

    @staticmethod
    def move_index(action) -> int:
        dx, dy = float(action[0]), float(action[1])
        if max(abs(dx), abs(dy)) < 0.5:
            return 0
        if abs(dx) >= abs(dy):
            return 4 if dx > 0 else 3
        return 2 if dy > 0 else 1

    def move_action(self, name: str) -> np.ndarray:
        return np.array(self.MOVE_ACTIONS[name])

    def cell_index(self, state) -> int:
        return int(state[0]) * self.n + int(state[1])

    def cell_state(self, index: int) -> np.ndarray:
        return np.array(divmod(int(index), self.n), dtype=np.float64)

    def next_cell(self, index: int, move: int) -> int:
        row, col = divmod(int(index), self.n)
        dr, dc = self.DELTAS[move]
        row = min(max(row + dr, 0), self.n - 1)
        col = min(max(col + dc, 0), self.n - 1)
        return row * self.n + col

    def sample_state(self, rng):
        return self.cell_state(rng.integers(self.n * self.n))

    def dynamics(self, state, action):
        return self.cell_state(self.next_cell(self.cell_index(state), self.move_index(action)))

    def render(self, state):
        obs = np.zeros(self.n * self.n)
        obs[self.cell_index(state)] = 1.0
        return as_vector(obs, name="observation")

    def success_batch(self, states, goal_states):
        return np.all(np.atleast_2d(states) == np.atleast_2d(goal_states), axis=-1)


_REGISTRY = {
    "PointReach2D": lambda **kw: PointReach(dim=2, **kw),
    "PointReach3D": lambda **kw: PointReach(dim=3, **kw),
    "TwoLinkReacher": TwoLinkReacher,
    "PixelReach": PixelReach,
    "GridGoalWorld": GridGoalWorld,
}

ENV_NAMES = tuple(_REGISTRY)


def make_env(name: str, **kwargs) -> GoalEnv:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownEnvironmentError(f"unknown environment {name!r}; choose from {ENV_NAMES}") from None
    return factory(**kwargs)
