"""Goal-conditioned RL with an exact-match indicator reward.

Modules: ``core`` (observation equality, reward constants), ``envs``,
``rewards``, ``replay`` (hindsight relabeling and Q-threshold filtering),
``nn`` and ``agent`` (numpy DDPG), ``tabular`` (exact reach-time theory),
``harness`` (experiment runner) and ``cli``.
"""

from .core import RewardConstants, Transition, l2_distance, obs_equal
from .envs import ENV_NAMES, make_env

__all__ = ["ENV_NAMES", "RewardConstants", "Transition", "l2_distance", "make_env", "obs_equal"]
__version__ = "0.1.0"
