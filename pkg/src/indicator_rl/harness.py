"""Experiment orchestration: configs, training runs, ablations and the flip study.

A run is fully determined by its :class:`ExperimentConfig` and seed. Every
seed owns independent RNG streams (network init, episode collection, replay
sampling, reward flips, evaluation) spawned from ``SeedSequence(seed)``, so
changing the reward function never changes how episodes are collected until
the learned policies themselves diverge.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentConfig, DDPGAgent, evaluate, run_episode
from .core import RewardConstants
from .envs import ENV_NAMES, make_env
from .replay import FilterConfig, RelabelConfig, ReplayBuffer
from .rewards import FlipConfig, FlippedReward, IndicatorReward, OracleReward, RewardDiagnostics, diagnose_batch

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "INDICATOR_RL_OUTPUT_ROOT"

VARIANTS = (
    "oracle",
    "indicator",
    "indicator_balance",
    "indicator_filter",
    "indicator_balance_filter",
    "flip_fn",
    "flip_fp",
)
ABLATION_VARIANTS = VARIANTS[:5]
FLIP_RATES = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)

PLAIN_RELABEL = (0.0, 0.9, 0.1)
BALANCED_RELABEL = (0.45, 0.45, 0.1)

CSV_HEADER = ("epoch", "cycle", "seed", "success", "final_distance", "fn_rate", "fp_rate",
              "reward_accuracy", "positive_fraction", "filtered_fraction", "mean_q", "wall_seconds")
METRIC_COLUMNS = CSV_HEADER[3:]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "PointReach2D"
    variant: str = "indicator_balance_filter"
    flip_rate: float = 0.0
    seeds: list = field(default_factory=lambda: [1, 2])
    epochs: int = 30
    cycles_per_epoch: int = 16
    episodes_per_cycle: int = 1
    train_steps_per_cycle: int = 40
    eval_episodes: int = 20
    relabel: list | None = None
    buffer_capacity: int | None = None
    batch_size: int | None = None
    env_kwargs: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    output_dir: str = "runs/experiment"
    record_wall_time: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; choose from {ENV_NAMES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ConfigError("flip_rate must lie in [0, 1]")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for key in ("epochs", "cycles_per_epoch", "episodes_per_cycle", "eval_episodes", "jobs"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.train_steps_per_cycle < 0:
            raise ConfigError("train_steps_per_cycle must be >= 0")
        if self.relabel is not None:
            try:
                RelabelConfig(*self.relabel, capacity=10**6, batch_size=1)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"bad relabel probabilities: {err}") from None
        agent_fields = {f.name for f in dataclasses.fields(AgentConfig)} - {"reward_constants"}
        bad = set(self.agent) - agent_fields - {"gamma"}
        if bad:
            raise ConfigError(f"unknown agent keys: {sorted(bad)}")

    # derived pieces ----------------------------------------------------
    @property
    def is_visual(self) -> bool:
        return self.env == "PixelReach"

    def relabel_probs(self) -> tuple:
        if self.relabel is not None:
            return tuple(self.relabel)
        return BALANCED_RELABEL if "balance" in self.variant else PLAIN_RELABEL

    def uses_filter(self) -> bool:
        return self.variant.endswith("filter")

    def uses_indicator(self) -> bool:
        return self.variant.startswith("indicator")


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config file; ``overrides`` (dotted keys) win over file values."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    for key, value in (overrides or {}).items():
        target = data
        *parents, leaf = key.split(".")
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = value
    try:
        return ExperimentConfig.from_dict(data)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def resolve_output(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


@dataclass
class MetricsRow:
    epoch: int
    cycle: int
    seed: int
    success: float
    final_distance: float
    fn_rate: float
    fp_rate: float
    reward_accuracy: float
    positive_fraction: float
    filtered_fraction: float
    mean_q: float
    wall_seconds: float

    def as_list(self) -> list:
        return [getattr(self, name) for name in CSV_HEADER]


@dataclass
class SeedRun:
    """Everything built for one seed of one config."""

    env: object
    agent: DDPGAgent
    buffer: ReplayBuffer
    relabel: RelabelConfig
    filter: FilterConfig | None
    reward_fn: object
    constants: RewardConstants
    streams: dict


def build_run(cfg: ExperimentConfig, seed: int) -> SeedRun:
    env = make_env(cfg.env, **cfg.env_kwargs)
    spec = env.spec
    agent_kw = dict(cfg.agent)
    gamma = agent_kw.pop("gamma", None)
    c = RewardConstants.for_horizon(spec.horizon_T, spec.epsilon)
    if gamma is not None:
        c = dataclasses.replace(c, gamma=float(gamma))
    batch_size = cfg.batch_size or (128 if cfg.is_visual else 256)
    capacity = cfg.buffer_capacity or (5_000 if cfg.is_visual else 10**6)
    capacity = max(capacity, spec.horizon_T, batch_size)
    agent_kw.setdefault("normalize_obs", not cfg.is_visual)
    agent_kw["batch_size"] = batch_size
    names = ("init", "collect", "sample", "flip", "eval")
    streams = dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))
    rngs = {k: np.random.default_rng(v) for k, v in streams.items()}
    agent = DDPGAgent(spec.obs_dim, spec.action_dim, AgentConfig(reward_constants=c, **agent_kw), rngs["init"])
    if cfg.uses_indicator():
        reward_fn = IndicatorReward(c)
    elif cfg.variant == "oracle":
        reward_fn = OracleReward(env, c)
    else:
        flip = FlipConfig(p_fn=cfg.flip_rate) if cfg.variant == "flip_fn" else FlipConfig(p_fp=cfg.flip_rate)
        reward_fn = FlippedReward(env, c, flip, rngs["flip"])
    return SeedRun(
        env=env,
        agent=agent,
        buffer=ReplayBuffer(capacity, spec.horizon_T, spec.obs_dim, spec.state_dim, spec.action_dim),
        relabel=RelabelConfig(*cfg.relabel_probs(), capacity=capacity, batch_size=batch_size),
        filter=FilterConfig.from_constants(c) if cfg.uses_filter() else None,
        reward_fn=reward_fn,
        constants=c,
        streams=dict(rngs, eval_seed=streams["eval"]),
    )


def collect_episode(run: SeedRun, rng, explore: bool = True):
    episode, stats = run_episode(run.agent, run.env, rng, explore)
    run.buffer.store_episode(episode)
    run.agent.update_normalizer(np.stack([tr.obs for tr in episode] + [episode[-1].next_obs, episode[0].goal_obs]))
    return episode, stats


def train_seed(cfg: ExperimentConfig, seed: int, progress=None) -> list:
    run = build_run(cfg, seed)
    rngs = run.streams
    rows = []
    start = time.perf_counter()
    cycles = 0
    for epoch in range(cfg.epochs):
        diag = RewardDiagnostics.from_counts(0, 0, 0, 0, 0)
        n_sampled = n_kept = 0
        q_sum = 0.0
        for _ in range(cfg.cycles_per_epoch):
            for _ in range(cfg.episodes_per_cycle):
                collect_episode(run, rngs["collect"])
            for _ in range(cfg.train_steps_per_cycle):
                stats = run.agent.train_step(run.buffer, run.relabel, run.filter, run.reward_fn, rngs["sample"])
                n_sampled += stats.n_sampled
                n_kept += stats.n_kept
                if stats.n_kept:
                    q_sum += stats.mean_q * stats.n_kept
                    b = stats.batch
                    diag = diag.merge(diagnose_batch(b.reward, b.next_state, b.goal_state, run.env, run.constants))
            cycles += 1
        report = evaluate(run.agent, run.env, cfg.eval_episodes, np.random.default_rng(rngs["eval_seed"]))
        wall = time.perf_counter() - start
        rows.append(MetricsRow(
            epoch=epoch,
            cycle=cycles,
            seed=seed,
            success=report.success,
            final_distance=report.final_distance,
            fn_rate=diag.fn_rate,
            fp_rate=diag.fp_rate,
            reward_accuracy=diag.accuracy,
            positive_fraction=diag.positive_fraction,
            filtered_fraction=(n_sampled - n_kept) / n_sampled if n_sampled else 0.0,
            mean_q=q_sum / n_kept if n_kept else float("nan"),
            wall_seconds=wall if cfg.record_wall_time else 0.0,
        ))
        log.info("%s/%s seed=%d epoch=%d success=%.3f dist=%.4f (%.1fs)", cfg.env, cfg.variant, seed,
                 epoch, report.success, report.final_distance, wall)
        if progress is not None:
            progress(rows[-1])
    return rows


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_rows(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(v) for v in row.as_list()])
    return path


def read_rows(path) -> list:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (int(v) if k in ("epoch", "cycle", "seed") else float(v)) for k, v in r.items()}
                for r in reader]


def aggregate_rows(per_seed: list) -> list:
    """Mean and population std across seeds for each epoch."""
    by_epoch = {}
    for rows in per_seed:
        for r in rows:
            by_epoch.setdefault(r["epoch"], []).append(r)
    out = []
    for epoch in sorted(by_epoch):
        group = by_epoch[epoch]
        agg = {"epoch": epoch, "cycle": group[0]["cycle"], "n_seeds": len(group)}
        for m in METRIC_COLUMNS:
            vals = np.array([g[m] for g in group], dtype=np.float64)
            agg[f"{m}_mean"] = float(np.mean(vals))
            agg[f"{m}_std"] = float(np.std(vals))
        out.append(agg)
    return out


AGGREGATE_HEADER = ("epoch", "cycle", "n_seeds") + tuple(
    f"{m}_{s}" for m in METRIC_COLUMNS for s in ("mean", "std"))


def write_aggregate(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for r in rows:
            writer.writerow([_fmt(r[k]) for k in AGGREGATE_HEADER])
    return path


def _train_seed_job(args):
    cfg, seed = args
    return train_seed(cfg, seed)


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Train every seed; write ``metrics_seed<k>.csv`` and ``metrics_aggregate.csv``."""
    cfg.validate()
    out = resolve_output(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    jobs = [(cfg, int(s)) for s in cfg.seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_train_seed_job, jobs))
    else:
        results = [_train_seed_job(j) for j in jobs]
    paths = {}
    for (_, seed), rows in zip(jobs, results):
        paths[seed] = write_rows(out / f"metrics_seed{seed}.csv", rows)
    per_seed = [read_rows(p) for p in paths.values()]
    paths["aggregate"] = write_aggregate(out / "metrics_aggregate.csv", aggregate_rows(per_seed))
    return paths


def final_metrics(paths: dict) -> dict:
    """Last-epoch success and final distance averaged over seeds."""
    last = [read_rows(p)[-1] for k, p in paths.items() if k != "aggregate"]
    return {
        "success": float(np.mean([r["success"] for r in last])),
        "success_std": float(np.std([r["success"] for r in last])),
        "final_distance": float(np.mean([r["final_distance"] for r in last])),
        "final_distance_std": float(np.std([r["final_distance"] for r in last])),
        "n_seeds": len(last),
    }


def run_ablation(cfg: ExperimentConfig, variants=ABLATION_VARIANTS, output_dir=None) -> dict:
    out = resolve_output(output_dir or cfg.output_dir)
    results = {}
    for variant in variants:
        results[variant] = run_experiment(cfg.replace(variant=variant), out / variant)
    _write_summary(out / "ablation_summary.csv", ("variant",),
                   [((v,), final_metrics(p)) for v, p in results.items()])
    return results


FLIP_SUMMARY_HEADER = ("rate", "arm", "success", "success_std", "final_distance", "final_distance_std", "n_seeds")


def _write_summary(path, keys, entries):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metric_keys = ("success", "success_std", "final_distance", "final_distance_std", "n_seeds")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(keys + metric_keys)
        for key_vals, metrics in entries:
            writer.writerow([str(k) for k in key_vals] + [_fmt(metrics[m]) for m in metric_keys])
    return path


def run_flip_study(base: ExperimentConfig, rates=FLIP_RATES, output_dir=None) -> Path:
    """Train false-negative and false-positive arms at each flip rate.

    Returns the path of ``flip_summary.csv`` (one row per rate and arm).
    """
    out = resolve_output(output_dir or base.output_dir)
    entries = []
    for rate in rates:
        for arm in ("flip_fn", "flip_fp"):
            cfg = base.replace(variant=arm, flip_rate=float(rate))
            paths = run_experiment(cfg, out / f"{arm}_{rate:g}")
            entries.append(((f"{rate:g}", arm.split("_")[1]), final_metrics(paths)))
    return _write_summary(out / "flip_summary.csv", ("rate", "arm"), entries)


def read_summary(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
