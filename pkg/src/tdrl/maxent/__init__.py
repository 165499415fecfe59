"""Maximum-entropy policy optimisation: soft actor-critic and exact tabular updates."""

from .exact import ExactPolicy, soft_update_exact
from .replay import ReplayBuffer
from .sac import GaussianPolicy, SoftCritic, act, actor_loss, critic_loss, sac_update
from .warmup import Experience, warmup

__all__ = [
    "ExactPolicy", "soft_update_exact", "ReplayBuffer", "GaussianPolicy", "SoftCritic", "act",
    "actor_loss", "critic_loss", "sac_update", "Experience", "warmup",
]
