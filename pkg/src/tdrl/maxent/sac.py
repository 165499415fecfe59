"""Soft actor-critic on top of :mod:`tdrl.diffcore` networks.

The actor emits a mean and a log standard deviation per action dimension;
samples are squashed with tanh and mapped affinely onto the action box.
"""

from __future__ import annotations

import math

import numpy as np

from ..diffcore import AdamState, Mlp, adam_step
from ..errors import NonFiniteError

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class GaussianPolicy:
    def __init__(self, state_dim, action_dim, action_low, action_high, hidden=(1024, 1024),
                 rng=None, init_alpha=1.0, auto_alpha=True, target_entropy=None, actor=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.low = np.asarray(action_low, dtype=np.float64)
        self.high = np.asarray(action_high, dtype=np.float64)
        self.center = 0.5 * (self.high + self.low)
        self.half = 0.5 * (self.high - self.low)
        self.actor = actor if actor is not None else Mlp(
            [self.state_dim, *hidden, 2 * self.action_dim], "relu", "identity", rng=rng)
        self.actor_optim = AdamState.for_params(self.actor.params)
        self.log_alpha = np.array([math.log(init_alpha)])
        self.alpha_optim = AdamState.for_params([self.log_alpha])
        self.auto_alpha = auto_alpha
        self.target_entropy = -float(self.action_dim) if target_entropy is None else target_entropy

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def _split(self, out):
        da = self.action_dim
        mean = out[..., :da]
        raw = out[..., da:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        inside = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        return mean, log_std, inside

    def squash(self, u):
        return self.center + self.half * np.tanh(u)

    def rsample(self, states, noise, cached=False):
        """Reparameterised sample for given standard-normal ``noise``.

        Returns ``(action, log_prob, parts)``; ``parts`` carries what the
        actor gradient needs (and the network cache when ``cached``).
        """
        if cached:
            out, cache = self.actor.forward_cached(states)
        else:
            out, cache = self.actor.forward(states), None
        mean, log_std, inside = self._split(out)
        std = np.exp(log_std)
        u = mean + std * noise
        t = np.tanh(u)
        jac = self.half * (1.0 - t * t) + _SQUASH_EPS
        log_prob = np.sum(-0.5 * noise * noise - log_std - _HALF_LOG_2PI - np.log(jac), axis=-1)
        action = self.center + self.half * t
        parts = {"cache": cache, "std": std, "t": t, "jac": jac, "noise": noise, "inside": inside}
        return action, log_prob, parts


def act(policy, s, stochastic=True, rng=None):
    """Squashed sample (``stochastic``) or squashed mean for one state."""
    out = policy.actor.forward(np.asarray(s, dtype=np.float64))
    mean, log_std, _ = policy._split(out)
    if not stochastic:
        return policy.squash(mean)
    noise = rng.standard_normal(policy.action_dim)
    return policy.squash(mean + np.exp(log_std) * noise)


class SoftCritic:
    """Twin Q networks with Polyak-averaged targets."""

    def __init__(self, state_dim, action_dim, hidden=(1024, 1024), rng=None, gamma=0.99,
                 tau=0.005, nets=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = [state_dim + action_dim, *hidden, 1]
        if nets is None:
            nets = [Mlp(widths, "relu", "identity", rng=rng) for _ in range(2)]
        self.q1, self.q2 = nets
        self.q1_target, self.q2_target = self.q1.copy(), self.q2.copy()
        self.q1_optim = AdamState.for_params(self.q1.params)
        self.q2_optim = AdamState.for_params(self.q2.params)
        self.gamma = float(gamma)
        self.tau = float(tau)

    def polyak(self, tau=None):
        tau = self.tau if tau is None else tau
        for net, tgt in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for p, pt in zip(net.params, tgt.params):
                pt *= 1.0 - tau
                pt += tau * p


def _sa(s, a):
    return np.concatenate([s, a], axis=-1)


def critic_loss(policy, critic, batch, next_noise):
    """Twin mean-squared soft Bellman errors and their gradients.

    Returns ``(loss, (grad_q1, grad_q2), target)``.
    """
    s, a, r = batch["states"], batch["actions"], batch["rewards"]
    s2, done = batch["next_states"], batch["dones"]
    a2, logp2, _ = policy.rsample(s2, next_noise)
    x2 = _sa(s2, a2)
    q_next = np.minimum(critic.q1_target.forward(x2)[:, 0], critic.q2_target.forward(x2)[:, 0])
    y = r + critic.gamma * (1.0 - done) * (q_next - policy.alpha * logp2)
    x = _sa(s, a)
    B = len(r)
    loss, grads = 0.0, []
    for net in (critic.q1, critic.q2):
        q, cache = net.forward_cached(x)
        err = q[:, 0] - y
        loss += float(np.mean(err * err))
        g, _ = net.backward(cache, (2.0 * err / B)[:, None])
        grads.append(g)
    return loss, tuple(grads), y


def actor_loss(policy, critic, states, noise):
    """``mean(alpha * log_pi - min(Q1, Q2))`` with its actor-parameter gradient.

    Returns ``(loss, grad, log_prob)``.
    """
    alpha = policy.alpha
    action, logp, parts = policy.rsample(states, noise, cached=True)
    x = _sa(states, action)
    q1, c1 = critic.q1.forward_cached(x)
    q2, c2 = critic.q2.forward_cached(x)
    use1 = (q1[:, 0] <= q2[:, 0])[:, None]
    qmin = np.where(use1, q1, q2)[:, 0]
    B = len(states)
    loss = float(np.mean(alpha * logp - qmin))
    da = policy.action_dim
    ones = np.ones((B, 1))
    _, dx1 = critic.q1.backward(c1, ones * use1)
    _, dx2 = critic.q2.backward(c2, ones * ~use1)
    dq_da = (dx1 + dx2)[:, -da:]
    t, std, eps = parts["t"], parts["std"], parts["noise"]
    # d/du of -log(half (1 - t^2) + eps): 2 half t (1 - t^2) / jac
    dlogjac = 2.0 * policy.half * t * (1.0 - t * t) / parts["jac"]
    dl_du = (alpha * dlogjac - dq_da * policy.half * (1.0 - t * t)) / B
    dl_dmean = dl_du
    dl_dlogstd = (dl_du * std * eps - alpha / B) * parts["inside"]
    grad, _ = policy.actor.backward(parts["cache"], np.concatenate([dl_dmean, dl_dlogstd], axis=-1))
    return loss, grad, logp


def sac_update(policy, critic, batch, rng, actor_lr=5e-4, critic_lr=5e-4, alpha_lr=1e-4):
    """One critic step, one actor step, one temperature step, then Polyak averaging."""
    B, da = len(batch["rewards"]), policy.action_dim
    c_loss, (g1, g2), _ = critic_loss(policy, critic, batch, rng.standard_normal((B, da)))
    if not math.isfinite(c_loss):
        raise NonFiniteError(f"critic loss is {c_loss}")
    adam_step(critic.q1, g1, critic.q1_optim, critic_lr)
    adam_step(critic.q2, g2, critic.q2_optim, critic_lr)

    a_loss, g_actor, logp = actor_loss(policy, critic, batch["states"], rng.standard_normal((B, da)))
    if not math.isfinite(a_loss):
        raise NonFiniteError(f"actor loss is {a_loss}")
    adam_step(policy.actor, g_actor, policy.actor_optim, actor_lr)

    alpha_loss = 0.0
    if policy.auto_alpha:
        gap = float(np.mean(logp + policy.target_entropy))
        alpha_loss = -float(policy.log_alpha[0]) * gap
        adam_step([policy.log_alpha], [np.array([-gap])], policy.alpha_optim, alpha_lr)

    critic.polyak()
    return {"critic_loss": c_loss, "actor_loss": a_loss, "alpha_loss": alpha_loss,
            "alpha": policy.alpha, "entropy": -float(np.mean(logp))}
