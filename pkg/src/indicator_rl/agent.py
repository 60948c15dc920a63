"""Goal-conditioned DDPG over ``(observation, goal observation)`` inputs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import RewardConstants, Transition, as_vector
from .nn import AdamState, DenseNet, adam_step, init_net, load_net, polyak_update, save_net
from .replay import FilterConfig, RelabelConfig, RelabeledBatch, ReplayBuffer, filter_mask


@dataclass
class AgentConfig:
    reward_constants: RewardConstants = field(default_factory=RewardConstants)
    tau: float = 0.98
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    batch_size: int = 256
    explore_sigma: float = 0.2
    explore_random_prob: float = 0.3
    normalize_obs: bool = True
    target_clip: tuple | None = None
    hidden: tuple = (256, 256, 256)
    normalizer_clip: float = 5.0

    def __post_init__(self):
        if self.target_clip is None:
            c = self.reward_constants
            self.target_clip = (c.q_min, c.q_max)
        self.target_clip = tuple(float(v) for v in self.target_clip)
        self.hidden = tuple(int(h) for h in self.hidden)


class RunningNormalizer:
    """Per-dimension running mean/variance with clipping of the normalised value."""

    def __init__(self, dim: int, clip: float = 5.0, var_floor: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0
        self.clip = clip
        self.var_floor = var_floor

    def update(self, x) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        if n == 0:
            return
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        if self.count == 0:
            self.mean, self.var, self.count = batch_mean, batch_var, n
            return
        total = self.count + n
        delta = batch_mean - self.mean
        m2 = self.var * self.count + batch_var * n + delta ** 2 * self.count * n / total
        self.mean = self.mean + delta * n / total
        self.var = m2 / total
        self.count = total

    def __call__(self, x):
        if self.count == 0:
            return np.asarray(x, dtype=np.float64)
        std = np.sqrt(np.maximum(self.var, self.var_floor))
        return np.clip((x - self.mean) / std, -self.clip, self.clip)


@dataclass
class TrainStats:
    n_sampled: int
    n_kept: int
    mean_q: float
    mean_target: float
    positive_fraction: float
    critic_loss: float
    batch: RelabeledBatch | None = None

    @property
    def n_filtered(self) -> int:
        return self.n_sampled - self.n_kept

    @property
    def filtered_fraction(self) -> float:
        return self.n_filtered / self.n_sampled if self.n_sampled else 0.0

    @property
    def skipped(self) -> bool:
        return self.n_kept == 0


class DDPGAgent:
    def __init__(self, obs_dim: int, action_dim: int, config: AgentConfig, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.config = config
        c = config.reward_constants
        self.actor = init_net([2 * obs_dim, *config.hidden, action_dim], "tanh", rng)
        self.critic = init_net([2 * obs_dim + action_dim, *config.hidden, 1], "linear", rng,
                               output_bias=c.q_min)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = AdamState.for_net(self.actor, learning_rate=config.lr_actor)
        self.critic_opt = AdamState.for_net(self.critic, learning_rate=config.lr_critic)
        self.normalizer = RunningNormalizer(obs_dim, clip=config.normalizer_clip)

    # inputs -----------------------------------------------------------
    def _norm(self, x):
        return self.normalizer(x) if self.config.normalize_obs else np.asarray(x, dtype=np.float64)

    def policy_input(self, obs, goal_obs):
        return np.concatenate([self._norm(obs), self._norm(goal_obs)], axis=-1)

    def update_normalizer(self, observations) -> None:
        self.normalizer.update(observations)

    # evaluation --------------------------------------------------------
    def act(self, obs, goal_obs) -> np.ndarray:
        return np.clip(self.actor(self.policy_input(obs, goal_obs)), -1.0, 1.0)

    def q_values(self, obs, action, goal_obs, target: bool = False) -> np.ndarray:
        net = self.critic_target if target else self.critic
        x = np.concatenate([self.policy_input(obs, goal_obs), action], axis=-1)
        return net(x)[..., 0]

    def select_action(self, obs, goal_obs, explore: bool, rng: np.random.Generator) -> np.ndarray:
        a = self.act(obs, goal_obs)
        if not explore:
            return a
        # fixed draw count per call keeps RNG consumption independent of the branch taken
        u = rng.random()
        noise = rng.standard_normal(self.action_dim)
        uniform = rng.uniform(-1.0, 1.0, self.action_dim)
        if u < self.config.explore_random_prob:
            return uniform
        return np.clip(a + self.config.explore_sigma * noise, -1.0, 1.0)

    # training ----------------------------------------------------------
    def critic_targets(self, batch: RelabeledBatch) -> np.ndarray:
        c = self.config.reward_constants
        x_next = self.policy_input(batch.next_obs, batch.goal_obs)
        a_next = self.actor_target(x_next)
        q_next = self.critic_target(np.concatenate([x_next, a_next], axis=-1))[:, 0]
        lo, hi = self.config.target_clip
        return np.clip(batch.reward + c.gamma * q_next, lo, hi)

    def critic_gradients(self, critic_in, targets, mask=None):
        """MSE loss over kept rows and its gradient w.r.t. critic parameters."""
        q, cache = self.critic.forward(critic_in)
        q = q[:, 0]
        if mask is None:
            mask = np.ones(q.shape[0], dtype=bool)
        n = int(mask.sum())
        err = np.where(mask, q - targets, 0.0)
        loss = float(np.sum(err ** 2) / max(n, 1))
        grads = self.critic.backward(cache, (2.0 * err / max(n, 1))[:, None])
        return loss, grads

    def train_step(self, buffer: ReplayBuffer, relabel_cfg: RelabelConfig, filter_cfg: FilterConfig | None,
                   reward_fn, rng: np.random.Generator) -> TrainStats:
        batch = buffer.sample_relabeled(relabel_cfg, reward_fn, rng)
        n_sampled = len(batch)
        x = self.policy_input(batch.obs, batch.goal_obs)
        critic_in = np.concatenate([x, batch.action], axis=-1)
        q_before = self.critic(critic_in)[:, 0]
        if filter_cfg is not None and filter_cfg.enabled:
            keep = filter_mask(batch, None, filter_cfg, q=q_before)
        else:
            keep = np.ones(n_sampled, dtype=bool)
        n_kept = int(keep.sum())
        if n_kept == 0:
            return TrainStats(n_sampled, 0, float(q_before.mean()), float("nan"), 0.0, float("nan"),
                              batch.subset(keep))
        if n_kept < n_sampled:
            batch = batch.subset(keep)
            x, critic_in = x[keep], critic_in[keep]
            q_before = q_before[keep]

        targets = self.critic_targets(batch)
        loss, grads = self.critic_gradients(critic_in, targets)
        adam_step(self.critic, grads, self.critic_opt)

        a_pi, actor_cache = self.actor.forward(x)
        q_pi, critic_cache = self.critic.forward(np.concatenate([x, a_pi], axis=-1))
        dq = np.full((n_kept, 1), -1.0 / n_kept)  # maximise mean Q
        d_in = self.critic.backward(critic_cache, dq, param_grads=False).input
        actor_grads = self.actor.backward(actor_cache, d_in[:, -self.action_dim:])
        adam_step(self.actor, actor_grads, self.actor_opt)

        polyak_update(self.actor_target, self.actor, self.config.tau)
        polyak_update(self.critic_target, self.critic, self.config.tau)
        c = self.config.reward_constants
        return TrainStats(n_sampled, n_kept, float(q_before.mean()), float(targets.mean()),
                          float(np.mean(batch.reward == c.r_plus)), loss, batch)

    # persistence -------------------------------------------------------
    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in ("actor", "critic", "actor_target", "critic_target"):
            files[name] = f"{name}.bin"
            save_net(getattr(self, name), directory / files[name])
        cfg = asdict(self.config)
        manifest = {
            "format": "indicator_rl.agent/1",
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "config": cfg,
            "networks": files,
            "normalizer": {
                "mean": self.normalizer.mean.tolist(),
                "var": self.normalizer.var.tolist(),
                "count": self.normalizer.count,
                "clip": self.normalizer.clip,
            },
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "DDPGAgent":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        cfg = dict(manifest["config"])
        cfg["reward_constants"] = RewardConstants(**cfg["reward_constants"])
        config = AgentConfig(**cfg)
        agent = cls(manifest["obs_dim"], manifest["action_dim"], config, np.random.default_rng(0))
        for name, fname in manifest["networks"].items():
            setattr(agent, name, load_net(directory / fname))
        agent.actor_opt = AdamState.for_net(agent.actor, learning_rate=config.lr_actor)
        agent.critic_opt = AdamState.for_net(agent.critic, learning_rate=config.lr_critic)
        norm = manifest["normalizer"]
        agent.normalizer.mean = np.array(norm["mean"])
        agent.normalizer.var = np.array(norm["var"])
        agent.normalizer.count = norm["count"]
        agent.normalizer.clip = norm["clip"]
        return agent


class RandomPolicy:
    """Uniform random actions over ``[-1, 1]^action_dim``."""

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def select_action(self, obs, goal_obs, explore, rng):
        return rng.uniform(-1.0, 1.0, self.action_dim)


@dataclass
class EpisodeStats:
    successes: np.ndarray
    final_distance: float

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))


@dataclass
class EvalReport:
    success: float
    final_distance: float


def run_episode(policy, env, rng: np.random.Generator, explore: bool):
    """Roll one full-horizon episode. Returns ``(transitions, EpisodeStats)``."""
    state, obs, goal = env.reset(rng)
    episode = []
    successes = np.zeros(env.spec.horizon_T, dtype=bool)
    for t in range(env.spec.horizon_T):
        action = as_vector(policy.select_action(obs, goal.goal_obs, explore, rng), name="action")
        next_state, next_obs = env.step(state, action)
        episode.append(Transition(obs=obs, action=action, next_obs=next_obs, goal_obs=goal.goal_obs, t=t,
                                  state=state.ground_truth, next_state=next_state.ground_truth,
                                  goal_state=goal.goal_state))
        successes[t] = env.true_success(next_state.ground_truth, goal.goal_state)
        state, obs = next_state, next_obs
    final = env.goal_distance(state.ground_truth, goal.goal_state)
    return episode, EpisodeStats(successes, final)


def evaluate(policy, env, n_episodes: int, rng: np.random.Generator) -> EvalReport:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    success, distance = 0.0, 0.0
    for _ in range(n_episodes):
        _, stats = run_episode(policy, env, rng, explore=False)
        success += stats.success_rate
        distance += stats.final_distance
    return EvalReport(success / n_episodes, distance / n_episodes)
