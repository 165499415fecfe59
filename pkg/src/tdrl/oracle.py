"""Brute-force checks of the convergence guarantees on enumerable MDPs.

Everything here works on exact trajectory distributions (``{key: prob}``)
produced by :func:`tdrl.envs.enumerate_trajectories`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import GridChain, GridPath, all_paths, enumerate_trajectories
from .errors import EmptySetError
from .maxent.exact import ExactPolicy, soft_update_exact
from .testkit import pass_count


def _states(tau):
    if isinstance(tau, GridPath):
        return np.asarray(tau.states, dtype=np.float64).reshape(len(tau.states), -1)
    return np.asarray(tau.states, dtype=np.float64)


def hamming_states(t1, t2):
    """Number of timesteps whose states differ (equal-length trajectories)."""
    s1, s2 = _states(t1), _states(t2)
    if s1.shape != s2.shape:
        raise ValueError("hamming distance needs equal-length state sequences")
    return int(np.sum(np.any(s1 != s2, axis=1)))


def mean_state_distance(t1, t2):
    """Mean per-step Euclidean distance between state sequences."""
    s1, s2 = _states(t1), _states(t2)
    if s1.shape != s2.shape:
        raise ValueError("mean state distance needs equal-length state sequences")
    return float(np.mean(np.linalg.norm(s1 - s2, axis=1)))


METRICS = {"hamming-states": hamming_states, "mean-state-distance": mean_state_distance}


def _metric(metric):
    return METRICS[metric] if isinstance(metric, str) else metric


def optimal_set(paths, suite):
    """Trajectories passing every pass-fail test of ``suite``.

    Also recomputes the set as the intersection of the per-test passing sets
    and raises if the two constructions disagree.
    """
    outcomes = {tau: suite.run_tests(tau.to_trajectory()) for tau in paths}
    direct = {tau for tau, o in outcomes.items() if pass_count(o) == suite.m}
    per_test = [{tau for tau, o in outcomes.items() if o.passfail_bits[i]} for i in range(suite.m)]
    intersection = set.intersection(*per_test) if per_test else set(paths)
    if direct != intersection:
        raise AssertionError("all-pass set differs from intersection of per-test sets")
    return [tau for tau in paths if tau in direct]


def distance_to_set(tau, opt_set, metric="hamming-states"):
    if not opt_set:
        raise EmptySetError("optimal trajectory set is empty; the task is infeasible at this horizon")
    d = _metric(metric)
    return min(d(tau, other) for other in opt_set)


def wasserstein_to_dirac(dist, opt_set, metric="hamming-states", p=1.0, rho=None):
    """W_p between ``dist`` and a point mass on the optimal set: ``(E[rho^p])^(1/p)``."""
    if p < 1:
        raise ValueError("Wasserstein order p must be >= 1")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {total}, not 1")
    if rho is None:
        rho = {tau: distance_to_set(tau, opt_set, metric) for tau in dist}
    moment = math.fsum(prob * float(rho[tau]) ** p for tau, prob in dist.items())
    return moment ** (1.0 / p)


def marginal_by_distance(dist, rho):
    out = {}
    for tau, prob in dist.items():
        out[rho[tau]] = out.get(rho[tau], 0.0) + prob
    return out


@dataclass
class Lemma1Report:
    monotone: bool
    table: dict
    violations: list = field(default_factory=list)


def check_lemma1(p1, p2, opt_set, metric="hamming-states", tol=1e-9, rho=None):
    """Is the likelihood ratio ``P2(rho) / P1(rho)`` non-increasing in ``rho``?"""
    if set(p1) != set(p2):
        raise ValueError("the two distributions are defined on different trajectory sets")
    if rho is None:
        rho = {tau: distance_to_set(tau, opt_set, metric) for tau in p1}
    m1, m2 = marginal_by_distance(p1, rho), marginal_by_distance(p2, rho)
    table = {r: m2[r] / m1[r] for r in sorted(m1) if m1[r] > 0}
    keys = list(table)
    violations = [(a, b) for a, b in zip(keys[:-1], keys[1:]) if table[b] > table[a] + tol]
    return Lemma1Report(not violations, table, violations)


@dataclass
class Theorem1Report:
    d1: float
    d2: float
    hypothesis_met: bool
    holds: bool | None

    @property
    def status(self):
        if not self.hypothesis_met:
            return "hypothesis not met"
        return "pass" if self.holds else "fail"


def return_is_monotone(R, rho, keys):
    """``rho(a) <= rho(b)`` implies ``R(a) >= R(b)`` over all enumerated keys."""
    pts = sorted(((rho[k], R(k)) for k in keys), key=lambda x: x[0])
    # Group equal distances: within a group returns must be equal, across groups non-increasing.
    prev_min = math.inf
    i = 0
    while i < len(pts):
        j = i
        while j < len(pts) and pts[j][0] == pts[i][0]:
            j += 1
        group = [r for _, r in pts[i:j]]
        if max(group) - min(group) > 1e-12 or max(group) > prev_min + 1e-12:
            return False
        prev_min = min(group)
        i = j
    return True


def check_theorem1(pi1, R, alpha, opt_set, metric="hamming-states", p=1.0, tol=1e-12, rho=None):
    """Compare W_p distances to the optimal set before and after a soft update.

    ``pi1`` is an enumerated distribution; ``R`` is a callable on its keys.
    """
    if rho is None:
        rho = {tau: distance_to_set(tau, opt_set, metric) for tau in pi1}
    pi2 = soft_update_exact(pi1, R, alpha)
    d1 = wasserstein_to_dirac(pi1, opt_set, metric, p, rho)
    d2 = wasserstein_to_dirac(pi2, opt_set, metric, p, rho)
    if not return_is_monotone(R, rho, list(pi1)):
        return Theorem1Report(d1, d2, False, None)
    return Theorem1Report(d1, d2, True, d1 >= d2 - tol)


def mu_reference(tau1, tau2, opt_set, metric="hamming-states"):
    """Exact label from true distances to the optimal set."""
    r1 = distance_to_set(tau1, opt_set, metric)
    r2 = distance_to_set(tau2, opt_set, metric)
    if r1 < r2:
        return 1.0
    if r1 > r2:
        return 0.0
    return 0.5


def random_instance(rng, max_states=7):
    """A random enumerable GridChain with a random full-support tabular policy."""
    n_states = int(rng.integers(3, max_states + 1))
    n_actions = int(rng.integers(2, 4))
    slip = float(rng.choice([0.0, 0.0, 0.3]))
    env = GridChain(n_states=n_states, n_actions=n_actions, slip=slip)
    policy = ExactPolicy.random(env.horizon, n_states, n_actions, rng)
    return env, policy


def monotone_return(rho_values, rng):
    """Random non-increasing map from distance to return, as a lookup table."""
    levels = sorted(set(rho_values))
    drops = rng.uniform(0.0, 2.0, size=len(levels))
    drops[0] = 0.0
    base = float(rng.normal())
    values = base - np.cumsum(drops)
    return dict(zip(levels, values.tolist()))


@dataclass
class TheoryInstance:
    env: GridChain
    policy: ExactPolicy
    dist: dict
    opt_set: list
    rho: dict


def build_instance(rng, metric="hamming-states"):
    env, policy = random_instance(rng)
    suite = env.suite()
    opt = optimal_set(all_paths(env), suite)
    dist = enumerate_trajectories(env, policy)
    rho = {tau: distance_to_set(tau, opt, metric) for tau in dist}
    return TheoryInstance(env, policy, dist, opt, rho)


def verify_theory(instances=100, seed=0, alphas=(0.5, 1.0, 2.0), ps=(1.0, 2.0),
                  metric="hamming-states"):
    """Run the ratio-monotonicity and contraction checks on random GridChain instances.

    Returns a JSON-serialisable verdict.
    """
    rng = np.random.default_rng(seed)
    lemma_fail = theorem_fail = 0
    records = []
    for k in range(instances):
        inst = build_instance(rng, metric)
        table = monotone_return(inst.rho.values(), rng)
        R = lambda tau, table=table, rho=inst.rho: table[rho[tau]]
        alpha = float(rng.choice(alphas))
        pi2 = soft_update_exact(inst.dist, R, alpha)
        lemma = check_lemma1(inst.dist, pi2, inst.opt_set, metric, rho=inst.rho)
        lemma_fail += not lemma.monotone
        per_p = {}
        for p in ps:
            rep = check_theorem1(inst.dist, R, alpha, inst.opt_set, metric, p, rho=inst.rho)
            theorem_fail += rep.status != "pass"
            per_p[str(p)] = {"d1": rep.d1, "d2": rep.d2, "status": rep.status}
        records.append({"instance": k, "n_states": inst.env.n_states,
                        "n_actions": inst.env.n_actions, "slip": inst.env.slip,
                        "alpha": alpha, "trajectories": len(inst.dist),
                        "lemma1": "pass" if lemma.monotone else "fail", "theorem1": per_p})
    first = records[0]["theorem1"][str(ps[0])] if records else {"d1": 0.0, "d2": 0.0}
    return {
        "instances": instances,
        "seed": seed,
        "lemma1": "pass" if lemma_fail == 0 else "fail",
        "theorem1": "pass" if theorem_fail == 0 else "fail",
        "lemma1_violations": lemma_fail,
        "theorem1_violations": theorem_fail,
        "d1": first["d1"],
        "d2": first["d2"],
        "records": records,
    }


def comparator_agreement(env, comparator_stats=None, metric="hamming-states"):
    """Fraction of all ordered path pairs where the lexicographic label matches the exact one."""
    from .lexicomp import LexicographicComparator

    suite = env.suite()
    paths = all_paths(env)
    opt = optimal_set(paths, suite)
    outcomes = {tau: suite.evaluate(tau.to_trajectory()) for tau in paths}
    comp = LexicographicComparator.from_stats(comparator_stats or suite.stats)
    rho = {tau: distance_to_set(tau, opt, metric) for tau in paths}
    agree = total = 0
    for a in paths:
        for b in paths:
            if a == b:
                continue
            exact = 1.0 if rho[a] < rho[b] else 0.0 if rho[a] > rho[b] else 0.5
            agree += comp(outcomes[a], outcomes[b]) == exact
            total += 1
    return agree / total if total else 1.0
