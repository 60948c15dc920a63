"""Exact analysis of indicator rewards on finite deterministic goal MDPs.

Everything here is exact: value iteration to a tight fixed point, BFS reach
times, and exhaustive checks of

* the reach-time form of the optimal goal-conditioned Q-function
  ``Q = g^d / (1 - g) * (R+ - R-) + R- / (1 - g)``,
* separation of goal-reaching and non-goal-reaching transitions by ``q0``,
* the suboptimality bound ``t3 <= t2 <= t1 + diam``.

Note on naming: ``d`` in the closed form is the number of negative rewards
collected before the goal is entered, i.e. the BFS distance from the state
reached by the first action. The diameter of a goal set is called ``diam``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import RewardConstants
from .envs import GridGoalWorld
from .replay import derive_q0


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class TabularGoalMDP:
    next_state: np.ndarray  # (n_states, n_actions) int table
    stay_action: int = 0

    def __post_init__(self):
        table = np.asarray(self.next_state, dtype=np.int64)
        if table.ndim != 2:
            raise ValueError("transition table must be 2-D")
        if table.min() < 0 or table.max() >= table.shape[0]:
            raise ValueError("transition table is not total over the state set")
        if not np.array_equal(table[:, self.stay_action], np.arange(table.shape[0])):
            raise ValueError("every state needs a self-loop under the stay action")
        object.__setattr__(self, "next_state", table)

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


def grid_mdp(n: int) -> TabularGoalMDP:
    """4-connected ``n x n`` grid with a stay action (index 0), walls clip."""
    env = GridGoalWorld(n)
    table = [[env.next_cell(s, m) for m in range(len(env.MOVES))] for s in range(n * n)]
    return TabularGoalMDP(np.array(table), stay_action=0)


def path_mdp(n: int) -> TabularGoalMDP:
    """Line graph ``0 - 1 - ... - n-1`` with actions stay/left/right."""
    s = np.arange(n)
    return TabularGoalMDP(np.stack([s, np.maximum(s - 1, 0), np.minimum(s + 1, n - 1)], axis=1))


@dataclass
class ExactQ:
    q: np.ndarray  # (n_states, n_actions) for one target, or (n_goals, n_states, n_actions)
    constants: RewardConstants
    iterations: int = 0


def _iterate(next_state, rewards, c: RewardConstants, tol: float, q0=None):
    q = np.zeros_like(rewards) if q0 is None else q0
    it = 0
    while True:
        it += 1
        v = q.max(axis=-1)
        new = rewards + c.gamma * v[..., next_state]
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tol * (1.0 - c.gamma):
            return q, it


def value_iteration(mdp: TabularGoalMDP, goal_set, c: RewardConstants, tol: float = 1e-12) -> ExactQ:
    """Optimal Q for the reward ``R+`` on entering ``goal_set``, ``R-`` otherwise."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    inside = np.zeros(mdp.n_states, dtype=bool)
    inside[list(np.atleast_1d(goal_set))] = True
    rewards = np.where(inside[mdp.next_state], c.r_plus, c.r_minus)
    q, it = _iterate(mdp.next_state, rewards, c, tol)
    return ExactQ(q, c, it)


def exact_q_all_goals(mdp: TabularGoalMDP, c: RewardConstants, tol: float = 1e-12) -> ExactQ:
    """Indicator-on-states Q for every singleton goal: array ``(goal, state, action)``."""
    goals = np.arange(mdp.n_states)
    hit = mdp.next_state[None, :, :] == goals[:, None, None]
    rewards = np.where(hit, c.r_plus, c.r_minus)
    q, it = _iterate(mdp.next_state, rewards, c, tol)
    return ExactQ(q, c, it)


def _reverse_adjacency(mdp: TabularGoalMDP):
    preds = [[] for _ in range(mdp.n_states)]
    for s in range(mdp.n_states):
        for s2 in set(mdp.next_state[s].tolist()):
            preds[s2].append(s)
    return preds


def distances_to(mdp: TabularGoalMDP, target_set, _preds=None) -> np.ndarray:
    """Minimum steps from every state into ``target_set`` (-1 if unreachable)."""
    preds = _preds if _preds is not None else _reverse_adjacency(mdp)
    dist = np.full(mdp.n_states, -1, dtype=np.int64)
    queue = deque()
    for s in set(np.atleast_1d(target_set).tolist()):
        dist[s] = 0
        queue.append(s)
    while queue:
        s = queue.popleft()
        for p in preds[s]:
            if dist[p] < 0:
                dist[p] = dist[s] + 1
                queue.append(p)
    return dist


def all_pairs_distances(mdp: TabularGoalMDP) -> np.ndarray:
    """``D[a, b]`` = minimum steps from ``a`` to ``b``."""
    preds = _reverse_adjacency(mdp)
    return np.stack([distances_to(mdp, [b], preds) for b in range(mdp.n_states)], axis=1)


def bfs_reach_time(mdp: TabularGoalMDP, start: int, start_action: int | None, target_set) -> int:
    """Minimum number of steps from ``start`` to enter ``target_set``.

    With ``start_action`` given, the first step is forced and counted.
    """
    targets = set(np.atleast_1d(target_set).tolist())
    if not targets:
        raise ValueError("target set is empty")
    if start_action is not None:
        return 1 + bfs_reach_time(mdp, int(mdp.next_state[start, start_action]), None, sorted(targets))
    if start in targets:
        return 0
    seen = {start}
    frontier = [start]
    steps = 0
    while frontier:
        steps += 1
        nxt = []
        for s in frontier:
            for s2 in mdp.next_state[s].tolist():
                if s2 in targets:
                    return steps
                if s2 not in seen:
                    seen.add(s2)
                    nxt.append(s2)
        frontier = nxt
    raise UnreachableError(f"target set unreachable from state {start}")


def closed_form_q(d, c: RewardConstants, gamma: float | None = None):
    """Return of ``d`` negative rewards followed by positive rewards forever."""
    g = c.gamma if gamma is None else gamma
    return g ** np.asarray(d, dtype=np.float64) / (1.0 - g) * (c.r_plus - c.r_minus) + c.r_minus / (1.0 - g)


def closed_form_error(mdp: TabularGoalMDP, c: RewardConstants, gamma_override: float | None = None,
                      exact: ExactQ | None = None) -> float:
    """Max over ``(s, a, g)`` of ``|Q_vi - closed form|`` with BFS-derived ``d``."""
    exact = exact or exact_q_all_goals(mdp, c)
    dist = all_pairs_distances(mdp)  # dist[s, g]
    d = dist.T[:, mdp.next_state]  # (goal, state, action)
    if np.any(d < 0):
        raise UnreachableError("closed form needs every goal reachable")
    return float(np.max(np.abs(exact.q - closed_form_q(d, c, gamma_override))))


@dataclass
class SeparationReport:
    q0: float
    margin_positive: float  # min over goal-hitting triples of Q - q0
    margin_negative: float  # min over the rest of q0 - Q
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.margin_positive > 0 and self.margin_negative > 0


def verify_q0_separation(mdp: TabularGoalMDP, c: RewardConstants, q0: float | None = None,
                         exact: ExactQ | None = None) -> SeparationReport:
    q0 = derive_q0(c) if q0 is None else q0
    exact = exact or exact_q_all_goals(mdp, c)
    q = exact.q
    goals = np.arange(mdp.n_states)
    hit = mdp.next_state[None, :, :] == goals[:, None, None]
    bound = c.r_minus + c.gamma * c.r_plus / (1.0 - c.gamma)
    # bound checks allow a few ulps of value-iteration rounding
    slack = 1e-9 * max(1.0, abs(c.q_max))
    bad = (hit & ~(np.abs(q - c.q_max) <= slack) | (hit & ~(q > q0))
           | (~hit & ~(q <= bound + slack)) | (~hit & ~(q < q0)))
    violations = [tuple(int(i) for i in idx) for idx in np.argwhere(bad)]
    pos = q[hit] - q0
    neg = q0 - q[~hit]
    return SeparationReport(
        q0=q0,
        margin_positive=float(pos.min()) if pos.size else float("inf"),
        margin_negative=float(neg.min()) if neg.size else float("inf"),
        violations=violations,
    )


@dataclass
class ReachReport:
    t1: int
    t2: int
    t3: int
    diam: int
    start: int = -1
    goal: int = -1
    radius: int = 0
    t_goal: int = -1  # steps for the greedy policy to enter the goal itself

    @property
    def slack(self) -> int:
        return self.t1 + self.diam - self.t3

    @property
    def flagged(self) -> bool:
        return not (self.t3 <= self.t2 <= self.t1 + self.diam) or self.t_goal != self.t2


def greedy_reach_time(mdp: TabularGoalMDP, q_goal: np.ndarray, start: int, target_set) -> int:
    """Steps for the greedy policy on ``q_goal`` (ties: lowest action) to enter the set."""
    targets = set(np.atleast_1d(target_set).tolist())
    s, steps = start, 0
    while s not in targets:
        if steps > mdp.n_states:
            return -1
        s = int(mdp.next_state[s, int(np.argmax(q_goal[s]))])
        steps += 1
    return steps


def reach_report(mdp: TabularGoalMDP, start: int, goal: int, goal_set, dist: np.ndarray,
                 q_goal: np.ndarray, radius: int = 0) -> ReachReport:
    members = np.array(sorted(set(np.atleast_1d(goal_set).tolist())))
    return ReachReport(
        t1=int(dist[start, members].min()),
        t2=int(dist[start, goal]),
        t3=greedy_reach_time(mdp, q_goal, start, members),
        diam=int(dist[np.ix_(members, members)].max()),
        start=int(start),
        goal=int(goal),
        radius=int(radius),
        t_goal=greedy_reach_time(mdp, q_goal, start, [goal]),
    )


def verify_suboptimality_bound(mdp: TabularGoalMDP, n_instances: int, rng: np.random.Generator,
                               radii=(1, 2, 3), c: RewardConstants | None = None) -> list:
    """Random (start, goal, radius) instances with radius-``r`` BFS goal balls."""
    c = c or RewardConstants(gamma=0.98)
    exact = exact_q_all_goals(mdp, c)
    dist = all_pairs_distances(mdp)
    reports = []
    for _ in range(n_instances):
        start = int(rng.integers(mdp.n_states))
        goal = int(rng.integers(mdp.n_states))
        radius = int(rng.choice(radii))
        ball = np.flatnonzero((dist[goal] >= 0) & (dist[goal] <= radius))
        reports.append(reach_report(mdp, start, goal, ball, dist, exact.q[goal], radius))
    return reports
