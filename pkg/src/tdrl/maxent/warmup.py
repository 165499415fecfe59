"""Uniform-random exploration used before policy learning starts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..testkit import Trajectory


@dataclass
class Experience:
    trajectories: list = field(default_factory=list)
    transitions: list = field(default_factory=list)  # (s, a, s', done) tuples

    def __len__(self):
        return len(self.transitions)


def random_action(env, rng):
    return rng.uniform(env.action_low, env.action_high)


def warmup(env, steps, rng, first_id=0):
    """Roll out uniform-random actions for ``steps`` environment steps.

    Only complete episodes become trajectories; a trailing partial episode
    contributes transitions but no trajectory.
    """
    exp = Experience()
    if steps <= 0:
        return exp
    next_id = first_id
    s = env.reset(rng)
    states, actions = [s], []
    for _ in range(steps):
        a = random_action(env, rng)
        s2, done = env.step(a)
        exp.transitions.append((s, a, s2, done))
        actions.append(a)
        states.append(s2)
        s = s2
        if done:
            exp.trajectories.append(Trajectory(np.stack(states), np.stack(actions), id=next_id))
            next_id += 1
            s = env.reset(rng)
            states, actions = [s], []
    return exp
