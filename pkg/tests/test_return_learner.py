import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, relative_error
from reference import reference_bt_loss
from tdrl.diffcore import Mlp
from tdrl.envs import GridChain, all_paths
from tdrl.errors import DimensionError, EmptyBatchError, SnapshotError
from tdrl.lexicomp import ComparisonTriple
from tdrl.return_learner import (ReturnEnsemble, ReturnSnapshot, loss_dis, loss_penalty, p_hat,
                                 return_of, update_round)
from tdrl.testkit import TestOutcome


def constant_net(value, n_inputs=2):
    """Single-layer identity network that ignores its input and outputs ``value``."""
    return Mlp([n_inputs, 1], "relu", "identity", weights=[np.zeros((n_inputs, 1))],
               biases=[np.array([value])])


def linear_net(weights, n_inputs=2):
    return Mlp([n_inputs, 1], "relu", "identity", weights=[np.array(weights, dtype=float)[:, None]],
               biases=[np.zeros(1)])


def triple(v1, v2, mu, ids=(0, 1)):
    return ComparisonTriple(TestOutcome(ids[0], (0,), tuple(v1)), TestOutcome(ids[1], (0,), tuple(v2)), mu)


def test_p_hat_values():
    assert p_hat(1.0, 0.0) == pytest.approx(0.7310585786300049, abs=1e-12)
    assert p_hat(0.0, 0.0) == 0.5
    assert p_hat(800.0, 0.0) == 1.0 and p_hat(-800.0, 0.0) == 0.0


@given(st.floats(-50, 50), st.floats(-50, 50))
@settings(max_examples=200, deadline=None)
def test_p_hat_is_complementary(r1, r2):
    assert p_hat(r1, r2) + p_hat(r2, r1) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("mu", [0.5, 1.0])
def test_equal_returns_cost_log_two(mu):
    ens = ReturnEnsemble(2, members=[constant_net(0.3)])
    loss, _ = loss_dis([triple([0, 0], [1, 1], mu)], ens)
    assert abs(loss - math.log(2.0)) < 1e-9


def test_unit_margin_costs_softplus_minus_one():
    ens = ReturnEnsemble(2, members=[linear_net([1.0, 0.0])])
    loss, _ = loss_dis([triple([1.0, 0.0], [0.0, 0.0], 1.0)], ens)
    assert abs(loss - 0.31326168751822286) < 1e-9


def test_distance_loss_matches_reference_average(rng):
    ens = ReturnEnsemble(3, hidden=(5,), size=2, rng=rng)
    batch = [triple(rng.normal(size=3), rng.normal(size=3), mu, ids=(k, k + 100))
             for k, mu in enumerate([0.0, 0.5, 1.0, 1.0])]
    expected = np.mean([np.mean([reference_bt_loss(float(m.forward(np.array(t.outcome1.indicative_values))[0]),
                                                   float(m.forward(np.array(t.outcome2.indicative_values))[0]),
                                                   t.mu) for t in batch]) for m in ens.members])
    loss, _ = loss_dis(batch, ens)
    assert loss == pytest.approx(expected, rel=1e-12)


def _random_batch(rng, n=6, dim=3):
    mus = rng.choice([0.0, 0.5, 1.0], size=n)
    return [triple(rng.normal(size=dim), rng.normal(size=dim), float(mu), ids=(k, k + n))
            for k, mu in enumerate(mus)]


def test_distance_gradient_matches_central_difference(rng):
    ens = ReturnEnsemble(3, hidden=(6, 5), size=2, rng=rng)
    batch = _random_batch(rng)
    _, grads = loss_dis(batch, ens)
    params = [p for m in ens.members for p in m.params]
    numeric = central_difference(lambda: loss_dis(batch, ens)[0], params)
    analytic = [a for g in grads for a in g.arrays]
    assert relative_error(analytic, numeric) < 1e-4


def test_penalty_gradient_matches_central_difference(rng):
    ens = ReturnEnsemble(3, hidden=(6,), size=3, rng=rng)
    batch = _random_batch(rng)
    outcomes = [t.outcome1 for t in batch] + [t.outcome2 for t in batch]
    snap = ReturnSnapshot.capture(ens, outcomes)
    for m in ens.members:  # move away from the snapshot so the penalty is non-zero
        m.weights[0] += 0.1 * rng.normal(size=m.weights[0].shape)
    _, grads = loss_penalty(batch, ens, snap, coef=0.1)
    params = [p for m in ens.members for p in m.params]
    numeric = central_difference(lambda: loss_penalty(batch, ens, snap, 0.1)[0], params)
    analytic = [a for g in grads for a in g.arrays]
    assert relative_error(analytic, numeric) < 1e-4


def test_penalty_is_zero_at_snapshot(rng):
    ens = ReturnEnsemble(2, hidden=(4,), rng=rng)
    batch = _random_batch(rng, dim=2)
    snap = ReturnSnapshot.capture(ens, [t.outcome1 for t in batch] + [t.outcome2 for t in batch])
    loss, grads = loss_penalty(batch, ens, snap)
    assert loss == 0.0 and all(g.norm() == 0.0 for g in grads)


def test_penalty_counts_both_pair_members():
    ens = ReturnEnsemble(2, members=[constant_net(1.0)])
    snap = ReturnSnapshot({0: np.array([0.0]), 1: np.array([0.0])})
    loss, _ = loss_penalty([triple([0, 0], [0, 0], 1.0)], ens, snap, coef=0.1)
    assert loss == pytest.approx(0.2)


def test_missing_snapshot_entry_raises():
    ens = ReturnEnsemble(2, members=[constant_net(1.0)])
    with pytest.raises(SnapshotError):
        loss_penalty([triple([0, 0], [0, 0], 1.0)], ens, ReturnSnapshot({}), 0.1)


def test_empty_batch_raises():
    ens = ReturnEnsemble(2, members=[constant_net(0.0)])
    with pytest.raises(EmptyBatchError):
        loss_dis([], ens)


def test_return_of_checks_width():
    ens = ReturnEnsemble(2, members=[constant_net(0.5)])
    assert return_of(ens, TestOutcome(0, (1,), (3.0, 4.0))) == 0.5
    with pytest.raises(DimensionError):
        return_of(ens, TestOutcome(0, (1,), (3.0,)))


def _grid_buffer():
    env = GridChain(n_states=4, n_actions=2)
    return env, [p.to_trajectory() for p in all_paths(env)]


@pytest.mark.parametrize("strategy", ["GN", "ES"])
def test_update_round_separates_better_trajectories(strategy):
    env, trajs = _grid_buffer()
    suite = env.suite()
    ens = ReturnEnsemble(suite.n, hidden=(16, 16), size=3, rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(10):
        rep = update_round(ens, trajs, suite, strategy, rng, update_num=50, batch_size=32, lr=3e-3,
                           k_es=1e6)
    assert rep.applied == 50
    goal = [t for t in trajs if suite.evaluate(t).passfail_bits == (1, 1)]
    worst = [t for t in trajs if sum(suite.evaluate(t).passfail_bits) == 0]
    r_goal = min(return_of(ens, suite.evaluate(t)) for t in goal)
    r_worst = max(return_of(ens, suite.evaluate(t)) for t in worst)
    assert r_goal > r_worst


def test_early_stop_halts_before_applying_the_triggering_step():
    env, trajs = _grid_buffer()
    suite = env.suite()
    ens = ReturnEnsemble(suite.n, hidden=(8,), size=2, rng=np.random.default_rng(0))
    # step 1 sits on the snapshot (zero penalty gradient) and is applied;
    # step 2 has a positive penalty gradient, which a tiny multiple cannot absorb
    rep = update_round(ens, trajs, suite, "ES", np.random.default_rng(0), update_num=5,
                       batch_size=8, k_es=1e-12)
    assert rep.early_stopped and rep.steps == 2 and rep.applied == 1
    assert rep.grad_norm_pen > 0.0


def test_gn_round_always_applies_every_step():
    env, trajs = _grid_buffer()
    suite = env.suite()
    ens = ReturnEnsemble(suite.n, hidden=(8,), size=2, rng=np.random.default_rng(0))
    rep = update_round(ens, trajs, suite, "GN", np.random.default_rng(0), update_num=7, batch_size=8)
    assert rep.applied == rep.steps == 7 and not rep.early_stopped


def test_unknown_strategy_rejected():
    env, trajs = _grid_buffer()
    ens = ReturnEnsemble(2, hidden=(4,), size=1)
    with pytest.raises(ValueError):
        update_round(ens, trajs, env.suite(), "XX")
