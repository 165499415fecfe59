import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, relative_error
from reference import reference_soft_update
from tdrl.diffcore import Mlp
from tdrl.envs import GridChain, PointMassReach, enumerate_trajectories
from tdrl.maxent import (ExactPolicy, GaussianPolicy, ReplayBuffer, SoftCritic, act, actor_loss,
                         critic_loss, sac_update, soft_update_exact, warmup)


def small_agent(rng, ds=2, da=2, hidden=(8, 8), low=-1.0, high=1.0):
    policy = GaussianPolicy(ds, da, np.full(da, low), np.full(da, high), hidden=hidden, rng=rng,
                            init_alpha=0.3)
    critic = SoftCritic(ds, da, hidden=hidden, rng=rng, gamma=0.9)
    return policy, critic


def random_batch(rng, B=16, ds=2, da=2):
    return {"states": rng.normal(size=(B, ds)), "actions": rng.uniform(-1, 1, size=(B, da)),
            "next_states": rng.normal(size=(B, ds)), "rewards": rng.normal(size=B),
            "dones": (rng.random(B) < 0.2).astype(float)}


# -- policy sampling ---------------------------------------------------------

def test_zero_actor_acts_at_box_centre():
    actor = Mlp.zeros([3, 4, 4])
    policy = GaussianPolicy(3, 2, np.array([0.0, -2.0]), np.array([2.0, 4.0]), actor=actor)
    np.testing.assert_allclose(act(policy, np.ones(3), stochastic=False), [1.0, 1.0])


def test_same_seed_same_stochastic_action(rng):
    policy, _ = small_agent(rng)
    s = np.array([0.3, -0.2])
    a1 = act(policy, s, True, np.random.default_rng(5))
    a2 = act(policy, s, True, np.random.default_rng(5))
    assert np.array_equal(a1, a2)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
@settings(max_examples=100, deadline=None)
def test_actions_stay_inside_the_box(x, y):
    policy, _ = small_agent(np.random.default_rng(0), low=-0.5, high=2.0)
    a = act(policy, np.array([x, y]), True, np.random.default_rng(1))
    assert np.all(a >= -0.5) and np.all(a <= 2.0)


def test_stochastic_mean_matches_quadrature():
    policy = GaussianPolicy(1, 1, np.array([-1.0]), np.array([1.0]), hidden=(4,),
                            rng=np.random.default_rng(3))
    s = np.array([0.7])
    out = policy.actor.forward(s)
    mean, log_std = out[0], np.clip(out[1], -20, 2)
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    analytic = float(np.sum(weights * np.tanh(mean + np.exp(log_std) * nodes)) / math.sqrt(2 * math.pi))
    rng = np.random.default_rng(11)
    samples = np.array([act(policy, s, True, rng)[0] for _ in range(10_000)])
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - analytic) < 3 * se


def test_log_prob_matches_change_of_variables(rng):
    policy, _ = small_agent(rng, da=1)
    s = rng.normal(size=(1, 2))
    noise = rng.normal(size=(1, 1))
    a, logp, parts = policy.rsample(s, noise)
    out = policy.actor.forward(s)
    mu, std = out[0, 0], math.exp(np.clip(out[0, 1], -20, 2))
    u = mu + std * noise[0, 0]
    gauss = -0.5 * ((u - mu) / std) ** 2 - math.log(std) - 0.5 * math.log(2 * math.pi)
    assert logp[0] == pytest.approx(gauss - math.log(1 - math.tanh(u) ** 2 + 1e-6), rel=1e-10)


# -- losses and updates ------------------------------------------------------

def test_critic_target_is_reward_when_discount_and_alpha_vanish(rng):
    policy, critic = small_agent(rng)
    critic.gamma = 0.0
    policy.log_alpha[:] = -np.inf
    batch = random_batch(rng)
    _, _, y = critic_loss(policy, critic, batch, rng.normal(size=(16, 2)))
    np.testing.assert_array_equal(y, batch["rewards"])


def test_polyak_with_unit_tau_copies_online_weights(rng):
    policy, critic = small_agent(rng)
    critic.tau = 1.0
    sac_update(policy, critic, random_batch(rng), rng)
    for online, target in ((critic.q1, critic.q1_target), (critic.q2, critic.q2_target)):
        for p, pt in zip(online.params, target.params):
            np.testing.assert_allclose(pt, p, rtol=0, atol=1e-15)


def test_critic_gradient_matches_central_difference(rng):
    policy, critic = small_agent(rng)
    batch = random_batch(rng)
    noise = rng.normal(size=(16, 2))
    _, (g1, g2), _ = critic_loss(policy, critic, batch, noise)
    params = critic.q1.params + critic.q2.params
    numeric = central_difference(lambda: critic_loss(policy, critic, batch, noise)[0], params)
    assert relative_error(g1.arrays + g2.arrays, numeric) < 1e-4


def test_actor_gradient_matches_central_difference(rng):
    policy, critic = small_agent(rng)
    states = rng.normal(size=(2, 2))
    noise = rng.normal(size=(2, 2))
    _, grad, _ = actor_loss(policy, critic, states, noise)
    numeric = central_difference(lambda: actor_loss(policy, critic, states, noise)[0],
                                 policy.actor.params)
    assert relative_error(grad.arrays, numeric) < 1e-3


def test_sac_update_reports_finite_losses_and_moves_alpha(rng):
    policy, critic = small_agent(rng)
    alpha0 = policy.alpha
    rep = sac_update(policy, critic, random_batch(rng), rng)
    assert all(math.isfinite(rep[k]) for k in ("critic_loss", "actor_loss", "alpha", "entropy"))
    assert rep["alpha"] != alpha0


# -- replay and warm-up --------------------------------------------------------

def test_replay_is_fifo_with_mutable_rewards():
    buf = ReplayBuffer(1, 1, capacity=3)
    for k in range(5):
        buf.add([k], [k], [k + 1], float(k), False)
    data = buf.ordered()
    assert data["states"][:, 0].tolist() == [2, 3, 4]
    buf.set_rewards(0, 3, np.array([7.0, 8.0, 9.0]))
    assert buf.ordered()["rewards"].tolist() == [7.0, 8.0, 9.0]
    back = ReplayBuffer.from_state_dict(buf.state_dict())
    for key, value in buf.ordered().items():
        assert np.array_equal(back.ordered()[key], value)


def test_warmup_zero_steps_is_empty():
    exp = warmup(PointMassReach(), 0, np.random.default_rng(0))
    assert len(exp) == 0 and exp.trajectories == []


def test_warmup_episode_count_and_determinism():
    env = PointMassReach()
    exp = warmup(env, 9000, np.random.default_rng(0))
    assert len(exp.trajectories) == 45 and len(exp) == 9000
    again = warmup(PointMassReach(), 9000, np.random.default_rng(0))
    assert all(np.array_equal(a.states, b.states) for a, b in zip(exp.trajectories, again.trajectories))


# -- exact soft update ---------------------------------------------------------

def test_two_trajectory_closed_form():
    out = soft_update_exact({"a": 0.5, "b": 0.5}, {"a": math.log(2.0), "b": 0.0}, 1.0)
    assert out["a"] == pytest.approx(2 / 3, abs=1e-15) and out["b"] == pytest.approx(1 / 3, abs=1e-15)


def test_constant_return_leaves_distribution_unchanged():
    env = GridChain(5, 3, slip=0.3)
    dist = enumerate_trajectories(env, ExactPolicy.random(4, 5, 3, np.random.default_rng(0)))
    out = soft_update_exact(dist, lambda tau: 3.7, 0.8)
    assert max(abs(out[k] - dist[k]) for k in dist) < 1e-12


def test_huge_temperature_barely_moves_distribution():
    env = GridChain(4, 2)
    dist = enumerate_trajectories(env, ExactPolicy.uniform(3, 4, 2))
    out = soft_update_exact(dist, lambda tau: float(sum(tau.states)), 1e6)
    assert max(abs(out[k] - dist[k]) for k in dist) <= 1e-5


def test_matches_reference_on_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(20):
        n, a = int(rng.integers(3, 7)), int(rng.integers(2, 4))
        env = GridChain(n, a, slip=float(rng.choice([0.0, 0.25])))
        dist = enumerate_trajectories(env, ExactPolicy.random(env.horizon, n, a, rng))
        table = {k: float(rng.normal()) for k in dist}
        alpha = float(rng.uniform(0.2, 3.0))
        out = soft_update_exact(dist, table, alpha)
        keys = list(dist)
        ref = reference_soft_update([dist[k] for k in keys], [table[k] for k in keys], alpha)
        assert sum(abs(out[k] - r) for k, r in zip(keys, ref)) / 2 < 1e-12
        assert abs(math.fsum(out.values()) - 1.0) < 1e-12


@given(st.floats(-5, 5), st.floats(0.1, 10.0))
@settings(max_examples=100, deadline=None)
def test_shift_invariance(shift, alpha):
    dist = {0: 0.2, 1: 0.3, 2: 0.5}
    R = {0: 1.0, 1: -0.5, 2: 0.25}
    a = soft_update_exact(dist, R, alpha)
    b = soft_update_exact(dist, {k: v + shift for k, v in R.items()}, alpha)
    assert max(abs(a[k] - b[k]) for k in dist) < 1e-12


@given(st.floats(0.05, 5.0), st.floats(1.01, 3.0), st.floats(-3, 3))
@settings(max_examples=100, deadline=None)
def test_higher_temperature_never_lowers_entropy(alpha, factor, gap):
    def entropy(p):
        return -sum(x * math.log(x) for x in p.values() if x > 0)

    dist, R = {0: 0.5, 1: 0.5}, {0: gap, 1: 0.0}
    assert entropy(soft_update_exact(dist, R, alpha * factor)) >= entropy(soft_update_exact(dist, R, alpha)) - 1e-12


def test_rejects_non_positive_temperature():
    with pytest.raises(ValueError):
        soft_update_exact({0: 1.0}, {0: 0.0}, 0.0)
