"""The test-driven training loop: collect, learn returns, learn rewards, optimise policy."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from pathlib import Path

import numpy as np

from . import return_learner, reward_learner
from .config import RunConfig, SeedStreams
from .diffcore import load_mlp, save_mlp
from .envs import make_env
from .errors import CheckpointError, NonFiniteError
from .maxent.replay import ReplayBuffer
from .maxent.sac import GaussianPolicy, SoftCritic, act, sac_update
from .maxent.warmup import random_action
from .return_learner import ReturnEnsemble
from .reward_learner import RewardEnsemble
from .runlog import MetricsLog
from .testkit import TestOutcome, TestStats, Trajectory, pass_count

log = logging.getLogger(__name__)

_METRIC_KEYS = ("loss_dis", "loss_penalty", "loss_reward", "actor_loss", "critic_loss", "alpha",
                "grad_norm_dis", "grad_norm_pen", "es_stopped")


def metric_columns(suite):
    cols = ["iteration", "episodes"]
    cols += [f"pass_rate:{n}" for n in suite.passfail_names]
    cols += ["pass_rate:all"]
    cols += [f"mean:{n}" for n in suite.indicative_names]
    cols += list(_METRIC_KEYS)
    return cols


class Trainer:
    """Owns every piece of run state so it can be checkpointed and resumed exactly."""

    def __init__(self, config: RunConfig, run_dir=None):
        self.config = config
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.streams = SeedStreams(config.seed)
        self.env = make_env(config.env, **config.env_overrides)
        self.suite = self.env.suite(config.history_capacity)
        if config.use_segments and not self.suite.segment_compatible:
            log.warning("suite for %s is not segment-compatible; using whole episodes", config.env)
        self.use_segments = config.use_segments and self.suite.segment_compatible
        ds, da = self.env.state_dim, self.env.action_dim
        init = self.streams["init"]
        self.policy = GaussianPolicy(ds, da, self.env.action_low, self.env.action_high,
                                     hidden=(config.actor_hidden_dim,) * config.actor_depth,
                                     rng=init, init_alpha=config.init_alpha)
        self.critic = SoftCritic(ds, da, hidden=(config.critic_hidden_dim,) * config.critic_depth,
                                 rng=init, gamma=config.discount, tau=config.critic_tau)
        self.returns = ReturnEnsemble(self.suite.n, hidden=(config.ret_hidden_dim,) * config.ret_depth,
                                      size=config.ret_ensemble, rng=init)
        self.rewards = RewardEnsemble(ds, da, hidden=(config.rew_hidden_dim,) * config.rew_depth,
                                      size=config.rew_ensemble, rng=init)
        self.replay = ReplayBuffer(ds, da, config.replay_capacity)
        self.buffer = deque()
        self.recent = deque(maxlen=config.log_window)
        self.iteration = 0
        self.episodes = 0
        self.reward_scale = 1.0
        self.metrics = {k: 0.0 for k in _METRIC_KEYS}
        self._state = self.env.reset(self.streams["env"])
        self._ep_states = [self._state]
        self._ep_actions = []
        self.metrics_log = None
        if self.run_dir is not None:
            self.metrics_log = MetricsLog(self.run_dir / "metrics.csv", metric_columns(self.suite))

    # -- trajectory buffer -------------------------------------------------
    def _store_trajectory(self, traj):
        pieces = traj.segments(self.config.segment_size) if self.use_segments else [traj]
        for piece in pieces:
            self.suite.evaluate(piece)
            self.buffer.append(piece)
            while len(self.buffer) > self.config.trajectory_max_num:
                old = self.buffer.popleft()
                self.suite.forget(old.id)

    def trajectory_return(self, traj):
        return return_learner.return_of(self.returns, self.suite.evaluate(traj))

    # -- one iteration -----------------------------------------------------
    def step(self):
        cfg = self.config
        self.iteration += 1
        s = self._state
        if self.iteration <= cfg.unsupervised_steps:
            a = random_action(self.env, self.streams["explore"])
        else:
            a = act(self.policy, s, stochastic=True, rng=self.streams["explore"])
        s2, done = self.env.step(a)
        r = float(self.rewards(s, a))
        self.replay.add(s, a, s2, r, done)
        self._ep_states.append(s2)
        self._ep_actions.append(a)
        self._state = s2
        if done:
            traj = Trajectory(np.stack(self._ep_states), np.stack(self._ep_actions), id=self.episodes)
            self.episodes += 1
            self._store_trajectory(traj)
            self.recent.append(self.suite.run_tests(traj))
            self._state = self.env.reset(self.streams["env"])
            self._ep_states = [self._state]
            self._ep_actions = []
            self._log_row()

        if self.iteration % cfg.ret_update_interval == 0 and len(self.buffer) >= 2:
            self._return_round()
        if self.iteration % cfg.rew_update_interval == 0 and len(self.buffer) >= 1:
            self._reward_round()

        if self.iteration > cfg.unsupervised_steps and len(self.replay) >= cfg.batch_size:
            for _ in range(cfg.policy_updates_per_step):
                batch = self.replay.sample(cfg.batch_size, self.streams["replay"])
                batch["rewards"] = batch["rewards"] * self.reward_scale
                report = sac_update(self.policy, self.critic, batch, self.streams["sac"],
                                    cfg.actor_lr, cfg.critic_lr, cfg.alpha_lr)
                self.metrics["actor_loss"] = report["actor_loss"]
                self.metrics["critic_loss"] = report["critic_loss"]
                self.metrics["alpha"] = report["alpha"]

        if cfg.checkpoint_interval and self.run_dir is not None \
                and self.iteration % cfg.checkpoint_interval == 0:
            self.save(self.run_dir / "checkpoints" / f"iter_{self.iteration:08d}")

    def _return_round(self):
        cfg = self.config
        rep = return_learner.update_round(
            self.returns, self.buffer, self.suite, cfg.strategy, self.streams["pairs"],
            update_num=cfg.ret_update_num, batch_size=cfg.ret_batch_size, lr=cfg.ret_lr,
            penalty=cfg.ret_change_penalty, k_es=cfg.es_multiple)
        self.metrics.update(loss_dis=rep.loss_dis, loss_penalty=rep.loss_penalty,
                            grad_norm_dis=rep.grad_norm_dis, grad_norm_pen=rep.grad_norm_pen,
                            es_stopped=float(rep.early_stopped))
        log.debug("return round at %d: %s", self.iteration, rep)
        return rep

    def _reward_round(self):
        cfg = self.config
        rep = reward_learner.update_round(
            self.rewards, self.buffer, self.trajectory_return, self.streams["reward"],
            update_num=cfg.rew_update_num, batch_size=cfg.rew_batch_size, lr=cfg.rew_lr)
        reward_learner.relabel(self.replay, self.rewards)
        if cfg.normalize_rewards:
            std = float(np.std(self.replay.ordered()["rewards"]))
            self.reward_scale = 1.0 / std if std > 1e-8 else 1.0
        self.metrics["loss_reward"] = rep.loss_final
        log.debug("reward round at %d: %s", self.iteration, rep)
        return rep

    # -- logging -----------------------------------------------------------
    def current_row(self):
        recent = list(self.recent)
        row = {"iteration": self.iteration, "episodes": self.episodes}
        for i, name in enumerate(self.suite.passfail_names):
            row[f"pass_rate:{name}"] = float(np.mean([o.passfail_bits[i] for o in recent])) if recent else 0.0
        row["pass_rate:all"] = float(np.mean([pass_count(o) == self.suite.m for o in recent])) if recent else 0.0
        for j, name in enumerate(self.suite.indicative_names):
            row[f"mean:{name}"] = float(np.mean([o.indicative_values[j] for o in recent])) if recent else 0.0
        row.update(self.metrics)
        for key, value in row.items():
            if not math.isfinite(float(value)):
                raise NonFiniteError(f"metric {key} is {value} at iteration {self.iteration}")
        return row

    def _log_row(self):
        row = self.current_row()
        if self.metrics_log is not None:
            self.metrics_log.append(row)
        return row

    # -- driving -----------------------------------------------------------
    def run(self, iterations=None):
        target = self.config.total_iterations if iterations is None else self.iteration + iterations
        while self.iteration < target:
            self.step()
        return self

    def evaluate(self, episodes=None, seed_stream="eval"):
        return evaluate_policy(self.env.__class__(**self.config.env_overrides), self.policy,
                               self.config.eval_episodes if episodes is None else episodes,
                               self.streams[seed_stream])

    # -- checkpointing -----------------------------------------------------
    def save(self, directory):
        save_checkpoint(self, directory)

    @classmethod
    def load(cls, directory, run_dir=None):
        return load_checkpoint(directory, run_dir)


def evaluate_policy(env, policy, episodes, rng, stochastic=False):
    """Roll out ``episodes`` episodes and summarise the built-in test results."""
    suite = env.suite()
    outcomes = []
    for _ in range(episodes):
        s = env.reset(rng)
        states, actions = [s], []
        done = False
        while not done:
            a = act(policy, s, stochastic=stochastic, rng=rng)
            s, done = env.step(a)
            states.append(s)
            actions.append(a)
        outcomes.append(suite.run_tests(Trajectory(np.stack(states), np.stack(actions))))
    bits = np.array([o.passfail_bits for o in outcomes], dtype=float)
    values = np.array([o.indicative_values for o in outcomes], dtype=float)
    return {
        "episodes": episodes,
        "pass_rates": dict(zip(suite.passfail_names, bits.mean(axis=0).tolist())),
        "all_pass_rate": float(np.mean(bits.sum(axis=1) == suite.m)),
        "indicative_means": dict(zip(suite.indicative_names, values.mean(axis=0).tolist())),
    }


# ---------------------------------------------------------------------------
# Checkpoints: a directory of diffcore network files plus npz/json side files.

_NETS = ("actor", "q1", "q2", "q1_target", "q2_target")


def _nets(trainer):
    nets = {"actor": trainer.policy.actor, "q1": trainer.critic.q1, "q2": trainer.critic.q2,
            "q1_target": trainer.critic.q1_target, "q2_target": trainer.critic.q2_target}
    for k, m in enumerate(trainer.returns.members):
        nets[f"return_{k}"] = m
    for k, m in enumerate(trainer.rewards.members):
        nets[f"reward_{k}"] = m
    return nets


def _optims(trainer):
    opts = {"actor": trainer.policy.actor_optim, "alpha": trainer.policy.alpha_optim,
            "q1": trainer.critic.q1_optim, "q2": trainer.critic.q2_optim}
    for k, o in enumerate(trainer.returns.optims):
        opts[f"return_{k}"] = o
    for k, o in enumerate(trainer.rewards.optims):
        opts[f"reward_{k}"] = o
    return opts


def _outcome_dict(o):
    return {"id": o.trajectory_id, "bits": list(o.passfail_bits), "values": list(o.indicative_values)}


def _outcome_from(d):
    tid = tuple(d["id"]) if isinstance(d["id"], list) else d["id"]
    return TestOutcome(tid, tuple(d["bits"]), tuple(d["values"]))


def save_checkpoint(trainer, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, net in _nets(trainer).items():
        save_mlp(net, d / f"{name}.npz")
    arrays = {}
    for name, opt in _optims(trainer).items():
        arrays[f"{name}/step"] = np.array(opt.step)
        for k, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"{name}/m{k}"] = m
            arrays[f"{name}/v{k}"] = v
    with open(d / "optim.npz", "wb") as fh:
        np.savez(fh, **arrays)
    with open(d / "replay.npz", "wb") as fh:
        np.savez(fh, **trainer.replay.state_dict())
    traj_arrays = {}
    for k, t in enumerate(trainer.buffer):
        traj_arrays[f"states{k}"] = t.states
        traj_arrays[f"actions{k}"] = t.actions
    with open(d / "trajectories.npz", "wb") as fh:
        np.savez(fh, **traj_arrays)
    state = {
        "format": "tdrl-run", "version": 1,
        "config": trainer.config.to_dict(),
        "iteration": trainer.iteration, "episodes": trainer.episodes,
        "log_alpha": trainer.policy.log_alpha.tolist(),
        "reward_scale": trainer.reward_scale,
        "metrics": trainer.metrics,
        "trajectory_ids": [t.id for t in trainer.buffer],
        "outcomes": [_outcome_dict(trainer.suite.evaluate(t)) for t in trainer.buffer],
        "recent": [_outcome_dict(o) for o in trainer.recent],
        "episode_states": np.stack(trainer._ep_states).tolist(),
        "episode_actions": [np.asarray(a).tolist() for a in trainer._ep_actions],
        "env": trainer.env.get_state(),
        "rng": trainer.streams.state_dict(),
    }
    (d / "state.json").write_text(json.dumps(state))
    (d / "stats.json").write_text(json.dumps(trainer.suite.stats.to_dict()))


def _require(path):
    if not path.exists():
        raise CheckpointError(path.name, f"missing file {path}")
    return path


def load_checkpoint(directory, run_dir=None):
    d = Path(directory)
    if not d.is_dir():
        raise CheckpointError(str(d), "checkpoint directory not found")
    state = json.loads(_require(d / "state.json").read_text())
    trainer = Trainer(RunConfig.from_dict(state["config"]), run_dir=run_dir)
    for name, net in _nets(trainer).items():
        loaded = load_mlp(_require(d / f"{name}.npz"))
        net.set_params(loaded.params)
    with np.load(_require(d / "optim.npz")) as data:
        for name, opt in _optims(trainer).items():
            opt.step = int(data[f"{name}/step"])
            opt.m = [data[f"{name}/m{k}"].copy() for k in range(len(opt.m))]
            opt.v = [data[f"{name}/v{k}"].copy() for k in range(len(opt.v))]
    with np.load(_require(d / "replay.npz")) as data:
        trainer.replay = ReplayBuffer.from_state_dict({k: data[k] for k in data.files})
    trainer.policy.log_alpha[:] = state["log_alpha"]
    trainer.reward_scale = float(state["reward_scale"])
    trainer.iteration = state["iteration"]
    trainer.episodes = state["episodes"]
    trainer.metrics = dict(state["metrics"])
    trainer.suite.stats = TestStats.from_dict(json.loads(_require(d / "stats.json").read_text()))
    with np.load(_require(d / "trajectories.npz")) as data:
        for k, tid in enumerate(state["trajectory_ids"]):
            tid = tuple(tid) if isinstance(tid, list) else tid
            trainer.buffer.append(Trajectory(data[f"states{k}"], data[f"actions{k}"], id=tid))
    for o in state["outcomes"]:
        trainer.suite.restore_outcome(_outcome_from(o))
    trainer.recent.extend(_outcome_from(o) for o in state["recent"])
    trainer._ep_states = [np.array(s) for s in state["episode_states"]]
    trainer._ep_actions = [np.array(a) for a in state["episode_actions"]]
    trainer.env.set_state(state["env"])
    if getattr(trainer.env, "_rng", None) is not None:
        trainer.env._rng = trainer.streams["env"]
    trainer._state = trainer._ep_states[-1]
    trainer.streams.load_state_dict(state["rng"])
    return trainer
