"""Tabular policies and the exact maximum-entropy trajectory reweighting."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError


class ExactPolicy:
    """Action distribution per (timestep, state) for a finite-horizon MDP.

    ``probs`` has shape ``(horizon, n_states, n_actions)``.
    """

    def __init__(self, probs):
        probs = np.array(probs, dtype=np.float64)
        if probs.ndim != 3:
            raise DimensionError(f"expected (H, S, A) probabilities, got shape {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("each conditional action distribution must sum to 1")
        self.probs = probs

    @property
    def horizon(self):
        return self.probs.shape[0]

    @property
    def n_states(self):
        return self.probs.shape[1]

    @property
    def n_actions(self):
        return self.probs.shape[2]

    @classmethod
    def uniform(cls, horizon, n_states, n_actions):
        return cls(np.full((horizon, n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_states, n_actions):
        """``actions[t][s]`` is the chosen action; accepts an (H, S) table."""
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros(actions.shape + (n_actions,))
        np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
        return cls(probs)

    @classmethod
    def random(cls, horizon, n_states, n_actions, rng, concentration=1.0):
        return cls(rng.dirichlet(np.full(n_actions, concentration), size=(horizon, n_states)))

    def __call__(self, t, s):
        return self.probs[t, s]


def soft_update_exact(dist, R, alpha):
    """Reweight a trajectory distribution by ``exp(R / alpha)`` and renormalise.

    ``dist`` maps trajectory keys to probabilities, ``R`` is a callable on
    keys or a mapping. The partition function is a full sum over ``dist``;
    the largest exponent is subtracted first so large returns do not overflow.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not hasattr(dist, "items"):
        raise TypeError("soft_update_exact needs an enumerated trajectory distribution")
    keys = list(dist)
    p1 = np.array([dist[k] for k in keys], dtype=np.float64)
    ret = np.array([R[k] if hasattr(R, "__getitem__") and not callable(R) else R(k) for k in keys],
                   dtype=np.float64)
    logw = ret / alpha
    support = p1 > 0
    shift = logw[support].max() if support.any() else 0.0
    w = p1 * np.exp(logw - shift)
    z = math.fsum(w)
    return {k: float(v / z) for k, v in zip(keys, w)}
