"""Per-step reward learned by least-squares decomposition of trajectory returns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import AdamState, Mlp, adam_step
from .errors import DimensionError, EmptyBatchError, InsufficientDataError, NonFiniteError


class RewardEnsemble:
    """Ensemble of ``r(s, a)`` networks with unbounded (identity) outputs.

    Output layers start at zero so an untrained ensemble predicts reward 0.
    """

    def __init__(self, state_dim, action_dim, hidden=(256, 256, 256), size=3, rng=None,
                 members=None, zero_output=True):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        if members is not None:
            self.members = list(members)
        else:
            if size < 1:
                raise ValueError("ensemble size must be >= 1")
            rng = rng if rng is not None else np.random.default_rng(0)
            widths = [self.state_dim + self.action_dim, *hidden, 1]
            self.members = [Mlp(widths, "relu", "identity", rng=rng, zero_output=zero_output)
                            for _ in range(size)]
        if {tuple(m.widths) for m in self.members} != {tuple(self.members[0].widths)}:
            raise ValueError("ensemble members must share an architecture")
        if self.members[0].in_dim != self.state_dim + self.action_dim:
            raise DimensionError("member input width must equal state_dim + action_dim")
        self.optims = [AdamState.for_params(m.params) for m in self.members]

    @property
    def size(self):
        return len(self.members)

    def _inputs(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if s.shape[-1] != self.state_dim or a.shape[-1] != self.action_dim:
            raise DimensionError(
                f"expected state/action widths ({self.state_dim}, {self.action_dim}), "
                f"got ({s.shape[-1]}, {a.shape[-1]})")
        return np.concatenate([s, a], axis=-1)

    def member_outputs(self, s, a):
        x = self._inputs(s, a)
        return np.stack([m.forward(x)[..., 0] for m in self.members])

    def __call__(self, s, a):
        return self.member_outputs(s, a).mean(axis=0)


def reward_of(ens, s, a):
    return float(ens(s, a))


def _stack(trajs):
    if not trajs:
        raise EmptyBatchError("no trajectories given")
    s = np.concatenate([t.states[:-1] for t in trajs])
    a = np.concatenate([t.actions for t in trajs])
    starts = np.cumsum([0] + [t.length for t in trajs[:-1]])
    return s, a, starts


def loss_reward(trajs, returns, ens):
    """Sum over trajectories of ``(R - sum_t r(s_t, a_t))^2``, averaged over members.

    ``returns`` maps trajectory id to the target return (or is a sequence
    aligned with ``trajs``). Returns the loss and per-member gradients.
    """
    trajs = list(trajs)
    if hasattr(returns, "keys"):
        try:
            target = np.array([returns[t.id] for t in trajs], dtype=np.float64)
        except KeyError as exc:
            raise KeyError(f"no target return for trajectory {exc}") from None
    else:
        target = np.asarray(returns, dtype=np.float64)
        if target.shape != (len(trajs),):
            raise DimensionError("returns must align with trajectories")
    s, a, starts = _stack(trajs)
    x = ens._inputs(s, a)
    lengths = np.array([t.length for t in trajs])
    E = ens.size
    total, grads = 0.0, []
    for m in ens.members:
        r, cache = m.forward_cached(x)
        sums = np.add.reduceat(r[:, 0], starts)
        gap = target - sums
        total += float(np.sum(gap * gap))
        upstream = np.repeat(-2.0 * gap / E, lengths)[:, None]
        g, _ = m.backward(cache, upstream)
        grads.append(g)
    loss = total / E
    if not np.isfinite(loss):
        raise NonFiniteError("reward decomposition loss is not finite")
    return loss, grads


@dataclass
class RewardRoundReport:
    steps: int = 0
    loss_initial: float = 0.0
    loss_final: float = 0.0


def update_round(ens, trajectories, return_fn, rng=None, *, update_num=50, batch_size=128, lr=3e-4):
    """Fit the reward ensemble to current trajectory returns.

    ``return_fn(traj)`` supplies the target; it is evaluated once per
    trajectory before any step, so targets stay fixed for the round.
    Minibatches are drawn with replacement.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise InsufficientDataError("reward learning needs at least one trajectory")
    rng = rng if rng is not None else np.random.default_rng(0)
    targets = {t.id: float(return_fn(t)) for t in trajectories}
    report = RewardRoundReport()
    for step in range(update_num):
        idx = rng.integers(0, len(trajectories), size=batch_size)
        batch = [trajectories[i] for i in idx]
        loss, grads = loss_reward(batch, targets, ens)
        if step == 0:
            report.loss_initial = loss
        for m, opt, g in zip(ens.members, ens.optims, grads):
            adam_step(m, g, opt, lr)
        report.loss_final = loss
        report.steps += 1
    return report


def relabel(replay, ens, chunk=65536):
    """Overwrite every stored reward with the ensemble prediction; returns the count."""
    n = len(replay)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        s, a = replay.state_action_slice(start, stop)
        replay.set_rewards(start, stop, ens(s, a))
    return n
