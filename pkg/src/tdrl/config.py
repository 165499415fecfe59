"""Run configuration, JSON loading and named random streams."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

STRATEGIES = ("GN", "ES")


@dataclass
class RunConfig:
    # environment
    env: str = "point_mass"
    env_overrides: dict = field(default_factory=dict)
    seed: int = 0
    total_iterations: int = 100_000
    # policy learning
    discount: float = 0.99
    critic_hidden_dim: int = 1024
    actor_hidden_dim: int = 1024
    critic_depth: int = 2
    actor_depth: int = 2
    actor_lr: float = 0.0005
    critic_lr: float = 0.0005
    alpha_lr: float = 0.0001
    batch_size: int = 1024
    critic_tau: float = 0.005
    init_alpha: float = 1.0
    policy_updates_per_step: int = 1
    normalize_rewards: bool = True
    replay_capacity: int = 1_000_000
    # return / reward learning
    unsupervised_steps: int = 9000
    trajectory_max_num: int = 100
    segment_size: int = 50
    use_segments: bool = False
    rew_lr: float = 0.0003
    ret_lr: float = 0.0003
    rew_ensemble: int = 3
    ret_ensemble: int = 3
    rew_batch_size: int = 128
    ret_batch_size: int = 128
    rew_update_num: int = 50
    ret_update_num: int = 50
    ret_change_penalty: float = 0.1
    rew_update_interval: int = 5000
    ret_update_interval: int = 5000
    es_multiple: float = 10.0
    strategy: str = "ES"
    ret_hidden_dim: int = 256
    ret_depth: int = 3
    rew_hidden_dim: int = 256
    rew_depth: int = 3
    history_capacity: int = 10_000
    # bookkeeping
    log_window: int = 10
    eval_episodes: int = 50
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = [
            "total_iterations", "critic_hidden_dim", "actor_hidden_dim", "critic_depth",
            "actor_depth", "actor_lr", "critic_lr", "alpha_lr", "batch_size", "critic_tau",
            "init_alpha", "replay_capacity", "trajectory_max_num", "segment_size", "rew_lr",
            "ret_lr", "rew_ensemble", "ret_ensemble", "rew_batch_size", "ret_batch_size",
            "rew_update_num", "ret_update_num", "rew_update_interval", "ret_update_interval",
            "es_multiple", "ret_hidden_dim", "ret_depth", "rew_hidden_dim", "rew_depth",
            "history_capacity", "log_window",
        ]
        for key in positive:
            value = getattr(self, key)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise ConfigError(key, f"must be a positive number, got {value!r}")
        non_negative = ["unsupervised_steps", "ret_change_penalty", "policy_updates_per_step",
                        "eval_episodes", "checkpoint_interval", "seed"]
        for key in non_negative:
            value = getattr(self, key)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
                raise ConfigError(key, f"must be a non-negative number, got {value!r}")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount", f"must lie in [0, 1], got {self.discount!r}")
        if self.critic_tau > 1.0:
            raise ConfigError("critic_tau", "must not exceed 1")
        if isinstance(self.strategy, str):
            self.strategy = self.strategy.upper()
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"must be one of {STRATEGIES}, got {self.strategy!r}")
        if not isinstance(self.env_overrides, dict):
            raise ConfigError("env_overrides", "must be a JSON object")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("?", str(exc)) from None

    def replace(self, **changes):
        return self.from_dict({**self.to_dict(), **changes})


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("<file>", f"{path}: top level must be an object")
    return RunConfig.from_dict(data)


def desk_config(**changes):
    """Scaled-down point-mass run that fits a single CPU core."""
    base = dict(
        env="point_mass", total_iterations=100_000, critic_hidden_dim=64, actor_hidden_dim=64,
        batch_size=128, ret_hidden_dim=64, ret_depth=2, rew_hidden_dim=64, rew_depth=2,
        rew_batch_size=32, replay_capacity=100_000,
    )
    base.update(changes)
    return RunConfig.from_dict(base)


class SeedStreams:
    """Independent generators derived from one master seed, keyed by name."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def __getitem__(self, name):
        if name not in self._streams:
            ss = np.random.SeedSequence([self.seed, zlib.crc32(name.encode())])
            self._streams[name] = np.random.default_rng(ss)
        return self._streams[name]

    def state_dict(self):
        return {name: g.bit_generator.state for name, g in self._streams.items()}

    def load_state_dict(self, states):
        for name, state in states.items():
            self[name].bit_generator.state = state
