"""Built-in environments and their test suites.

``point_mass``  continuous 2-D double integrator that must reach a goal.
``grid_chain``  tiny tabular chain MDP whose trajectory space is enumerable.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .maxent.exact import ExactPolicy
from .testkit import IndicativeTest, PassFailTest, TestSuite, Trajectory

MAX_ENUMERATED = 10 ** 6


class PointMassReach:
    """State ``(x, y, vx, vy)``, action = acceleration in ``[-1, 1]^2``.

    Position integrates the pre-step velocity; velocity is then clipped to
    norm ``v_cap``. Episodes last exactly ``horizon`` steps.
    """

    name = "point_mass"

    def __init__(self, dt=0.05, horizon=200, v_cap=2.0, goal=(3.0, 3.0), start=(0.0, 0.0),
                 start_noise=0.1, goal_radius=0.1, speed_fraction=0.9, energy_budget=40.0):
        self.dt = float(dt)
        self.horizon = int(horizon)
        self.v_cap = float(v_cap)
        self.goal = np.array(goal, dtype=np.float64)
        self.start = np.array(start, dtype=np.float64)
        self.start_noise = float(start_noise)
        self.goal_radius = float(goal_radius)
        self.speed_fraction = float(speed_fraction)
        self.energy_budget = float(energy_budget)
        self.state_dim = 4
        self.action_dim = 2
        self.action_low = -np.ones(2)
        self.action_high = np.ones(2)
        self._state = None
        self._t = 0

    def reset(self, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        pos = self.start + rng.uniform(-self.start_noise, self.start_noise, size=2)
        self._state = np.concatenate([pos, np.zeros(2)])
        self._t = 0
        return self._state.copy()

    def dynamics(self, state, action):
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        pos, vel = state[:2], state[2:]
        new_pos = pos + vel * self.dt
        new_vel = vel + a * self.dt
        speed = float(np.hypot(new_vel[0], new_vel[1]))
        if speed > self.v_cap:
            new_vel = new_vel * (self.v_cap / speed)
        return np.concatenate([new_pos, new_vel])

    def step(self, action):
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        self._state = self.dynamics(self._state, action)
        self._t += 1
        return self._state.copy(), self._t >= self.horizon

    def get_state(self):
        return {"state": None if self._state is None else self._state.tolist(), "t": self._t}

    def set_state(self, data):
        self._state = None if data["state"] is None else np.array(data["state"], dtype=np.float64)
        self._t = int(data["t"])

    def suite(self, history_capacity=10_000):
        goal, r = self.goal, self.goal_radius
        vmax = self.speed_fraction * self.v_cap
        budget = self.energy_budget

        def dist(traj):
            return np.linalg.norm(traj.states[:, :2] - goal, axis=1)

        def speeds(traj):
            return np.linalg.norm(traj.states[:, 2:4], axis=1)

        def energy(traj):
            return float(np.sum(traj.actions ** 2))

        passfail = [
            PassFailTest("pf-reach", lambda tr: dist(tr)[-1] < r),
            PassFailTest("pf-speed-limit", lambda tr: speeds(tr).max() <= vmax),
            PassFailTest("pf-energy", lambda tr: energy(tr) <= budget),
        ]
        indicative = [
            IndicativeTest("ind-progress", lambda tr: -float(dist(tr).mean())),
            IndicativeTest("ind-speed-margin", lambda tr: vmax - float(speeds(tr).max())),
            IndicativeTest("ind-energy-margin", lambda tr: budget - energy(tr)),
        ]
        return TestSuite(passfail, indicative, history_capacity)


class GridPath(NamedTuple):
    """Hashable key for one enumerated GridChain trajectory."""

    states: tuple
    actions: tuple

    def to_trajectory(self, id=None):
        return Trajectory(np.array(self.states, dtype=np.float64)[:, None],
                          np.array(self.actions, dtype=np.float64)[:, None],
                          id=self if id is None else id)


class GridChain:
    """States ``0..N-1`` on a line; actions left, right and optionally stay.

    A move fails (the agent stays put) with probability ``slip``. Moves off
    either end leave the state unchanged. The start state is 0.
    """

    name = "grid_chain"
    LEFT, RIGHT, STAY = 0, 1, 2

    def __init__(self, n_states=5, n_actions=2, horizon=None, slip=0.0, start=0):
        if not 2 <= n_states <= 8:
            raise ValueError("n_states must be in [2, 8]")
        if n_actions not in (2, 3):
            raise ValueError("n_actions must be 2 or 3")
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.horizon = int(horizon if horizon is not None else n_states - 1)
        if not 1 <= self.horizon <= 6:
            raise ValueError("horizon must be in [1, 6]")
        self.slip = float(slip)
        self.start_state = int(start)
        self.state_dim = 1
        self.action_dim = 1
        self.action_low = np.zeros(1)
        self.action_high = np.array([n_actions - 1.0])
        self.transitions = self._build_table()
        self._s = None
        self._t = 0
        self._rng = None

    def _build_table(self):
        N, A = self.n_states, self.n_actions
        P = np.zeros((N, A, N))
        for s in range(N):
            for a in range(A):
                target = {self.LEFT: max(s - 1, 0), self.RIGHT: min(s + 1, N - 1), self.STAY: s}[a]
                P[s, a, target] += 1.0 - self.slip
                P[s, a, s] += self.slip
        return P

    def reset(self, seed=None):
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._s = self.start_state
        self._t = 0
        return np.array([float(self._s)])

    def step(self, action):
        a = int(round(float(np.ravel(action)[0])))
        if not 0 <= a < self.n_actions:
            raise DimensionError(f"action {a} outside [0, {self.n_actions})")
        probs = self.transitions[self._s, a]
        self._s = int(self._rng.choice(self.n_states, p=probs))
        self._t += 1
        return np.array([float(self._s)]), self._t >= self.horizon

    def get_state(self):
        return {"state": self._s, "t": self._t,
                "rng": None if self._rng is None else self._rng.bit_generator.state}

    def set_state(self, data):
        self._s, self._t = data["state"], int(data["t"])
        if data["rng"] is not None:
            self._rng = np.random.default_rng()
            self._rng.bit_generator.state = data["rng"]

    def suite(self, history_capacity=10_000):
        goal = self.n_states - 1

        def visited(traj):
            return traj.states[:, 0].astype(int)

        passfail = [
            PassFailTest("pf-goal", lambda tr: visited(tr)[-1] == goal),
            PassFailTest("pf-no-revisit", lambda tr: len(set(visited(tr))) == len(visited(tr))),
        ]
        indicative = [
            IndicativeTest("ind-rightmost", lambda tr: float(visited(tr).max())),
            IndicativeTest("ind-steps-right",
                           lambda tr: float(np.sum(np.diff(visited(tr)) > 0))),
        ]
        return TestSuite(passfail, indicative, history_capacity)


_ENVS = {"point_mass": PointMassReach, "grid_chain": GridChain}


def make_env(name, **overrides):
    try:
        cls = _ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(_ENVS)}") from None
    return cls(**overrides)


def builtin_suite(env_name, **overrides):
    """Fresh test suite for a built-in environment (thresholds from ``overrides``)."""
    return make_env(env_name, **overrides).suite()


def enumerate_trajectories(env, policy):
    """Exact ``{GridPath: probability}`` over every positive-probability path."""
    if not isinstance(env, GridChain):
        raise TypeError("exhaustive enumeration is only defined for GridChain")
    if not isinstance(policy, ExactPolicy):
        policy = ExactPolicy(policy)
    H, N, A = env.horizon, env.n_states, env.n_actions
    if policy.probs.shape != (H, N, A):
        raise DimensionError(f"policy shape {policy.probs.shape} != {(H, N, A)}")
    branching = A * (2 if env.slip > 0 else 1)
    if branching ** H > MAX_ENUMERATED:
        raise ValueError(f"trajectory space too large to enumerate ({branching}^{H})")
    frontier = [((env.start_state,), (), 1.0)]
    for t in range(H):
        nxt = []
        for states, actions, p in frontier:
            s = states[-1]
            for a in range(A):
                pa = policy.probs[t, s, a]
                if pa == 0.0:
                    continue
                for s2 in np.flatnonzero(env.transitions[s, a]):
                    nxt.append((states + (int(s2),), actions + (a,),
                                p * pa * env.transitions[s, a, s2]))
        frontier = nxt
    out = {}
    for states, actions, p in frontier:
        key = GridPath(states, actions)
        out[key] = out.get(key, 0.0) + p
    return out


def all_paths(env):
    """Every feasible path of ``env`` (support of the uniform policy)."""
    return list(enumerate_trajectories(
        env, ExactPolicy.uniform(env.horizon, env.n_states, env.n_actions)))
