"""Trajectories, pass-fail / indicative test functions and cached evaluation."""

from __future__ import annotations

import itertools
import math
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, TestFunctionError, TrajectoryError

DEFAULT_HISTORY_CAPACITY = 10_000
UNEVALUATED_PASS_RATE = 0.5

_ids = itertools.count()


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    done: bool


class Trajectory:
    """A finite episode stored as ``states (T+1, ds)`` and ``actions (T, da)``.

    Consecutive transitions share their boundary state, so the chain
    invariant holds by construction; :meth:`from_transitions` checks it
    when building from loose transitions.
    """

    __slots__ = ("id", "states", "actions")

    def __init__(self, states, actions, id=None):
        states = np.array(states, dtype=np.float64)
        actions = np.array(actions, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if actions.ndim == 1:
            actions = actions[:, None]
        if actions.shape[0] < 1:
            raise TrajectoryError("trajectory must contain at least one transition")
        if states.shape[0] != actions.shape[0] + 1:
            raise TrajectoryError(
                f"need T+1 states for T actions, got {states.shape[0]} and {actions.shape[0]}")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
            raise TrajectoryError("trajectory contains non-finite values")
        states.setflags(write=False)
        actions.setflags(write=False)
        self.id = next(_ids) if id is None else id
        self.states = states
        self.actions = actions

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], id=None):
        if not transitions:
            raise TrajectoryError("trajectory must contain at least one transition")
        for t, (a, b) in enumerate(zip(transitions[:-1], transitions[1:])):
            if not np.array_equal(np.asarray(a.next_state), np.asarray(b.state)):
                raise TrajectoryError(f"chain broken between transitions {t} and {t + 1}")
        for t, tr in enumerate(transitions[:-1]):
            if tr.done:
                raise TrajectoryError(f"done flag set on non-final transition {t}")
        states = [np.atleast_1d(tr.state) for tr in transitions]
        states.append(np.atleast_1d(transitions[-1].next_state))
        shapes = {s.shape for s in states}
        if len(shapes) != 1:
            raise TrajectoryError(f"inconsistent state dimensions {sorted(shapes)}")
        actions = [np.atleast_1d(tr.action) for tr in transitions]
        return cls(np.stack(states), np.stack(actions), id=id)

    @property
    def length(self):
        return self.actions.shape[0]

    def __len__(self):
        return self.length

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def action_dim(self):
        return self.actions.shape[1]

    @property
    def transitions(self):
        T = self.length
        return [Transition(self.states[t], self.actions[t], self.states[t + 1], t == T - 1)
                for t in range(T)]

    def segment(self, start, stop, id=None):
        """Contiguous sub-trajectory covering transitions ``start:stop``."""
        if not 0 <= start < stop <= self.length:
            raise TrajectoryError(f"bad segment bounds [{start}, {stop})")
        return Trajectory(self.states[start:stop + 1], self.actions[start:stop],
                          id=(self.id, start) if id is None else id)

    def segments(self, size):
        """Split into consecutive segments of ``size`` transitions (last may be shorter)."""
        if size < 1:
            raise ValueError("segment size must be positive")
        return [self.segment(s, min(s + size, self.length)) for s in range(0, self.length, size)]

    def __repr__(self):
        return f"Trajectory(id={self.id!r}, T={self.length}, ds={self.state_dim}, da={self.action_dim})"


@dataclass(frozen=True)
class PassFailTest:
    name: str
    predicate: Callable[[Trajectory], object]

    __test__ = False


@dataclass(frozen=True)
class IndicativeTest:
    name: str
    functional: Callable[[Trajectory], float]

    __test__ = False


@dataclass(frozen=True)
class TestOutcome:
    trajectory_id: object
    passfail_bits: tuple
    indicative_values: tuple

    __test__ = False

    @property
    def m(self):
        return len(self.passfail_bits)

    @property
    def n(self):
        return len(self.indicative_values)


class TestStats:
    """Running pass counts and bounded indicative histories."""

    __test__ = False

    def __init__(self, m, n, capacity=DEFAULT_HISTORY_CAPACITY):
        self.evaluations = np.zeros(m, dtype=np.int64)
        self.passes = np.zeros(m, dtype=np.int64)
        self.capacity = int(capacity)
        self.histories = [deque(maxlen=self.capacity) for _ in range(n)]

    @property
    def m(self):
        return len(self.evaluations)

    @property
    def n(self):
        return len(self.histories)

    def record(self, bits, values):
        self.evaluations += 1
        self.passes += np.asarray(bits, dtype=np.int64)
        for h, v in zip(self.histories, values):
            h.append(float(v))

    def to_dict(self):
        return {"evaluations": self.evaluations.tolist(), "passes": self.passes.tolist(),
                "capacity": self.capacity, "histories": [list(h) for h in self.histories]}

    @classmethod
    def from_dict(cls, data):
        stats = cls(len(data["evaluations"]), len(data["histories"]), data["capacity"])
        stats.evaluations[:] = data["evaluations"]
        stats.passes[:] = data["passes"]
        for h, values in zip(stats.histories, data["histories"]):
            h.extend(float(v) for v in values)
        return stats


class TestSuite:
    """Ordered pass-fail and indicative tests with an outcome cache keyed by trajectory id.

    ``segment_compatible`` marks suites whose tests remain meaningful on
    contiguous pieces of an episode; only such suites honour a segment size.
    """

    __test__ = False

    def __init__(self, passfail, indicative, history_capacity=DEFAULT_HISTORY_CAPACITY,
                 segment_compatible=False):
        self.passfail = list(passfail)
        self.indicative = list(indicative)
        if not self.passfail or not self.indicative:
            raise ValueError("a suite needs at least one pass-fail and one indicative test")
        names = [t.name for t in self.passfail + self.indicative]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate test names in {names}")
        self.segment_compatible = segment_compatible
        self.stats = TestStats(len(self.passfail), len(self.indicative), history_capacity)
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def m(self):
        return len(self.passfail)

    @property
    def n(self):
        return len(self.indicative)

    @property
    def passfail_names(self):
        return [t.name for t in self.passfail]

    @property
    def indicative_names(self):
        return [t.name for t in self.indicative]

    def cached(self, trajectory_id):
        return self._cache.get(trajectory_id)

    def forget(self, trajectory_id):
        """Drop a cached outcome (stats are left untouched)."""
        with self._lock:
            self._cache.pop(trajectory_id, None)

    def restore_outcome(self, outcome):
        """Insert a previously computed outcome without touching the stats."""
        with self._lock:
            self._cache[outcome.trajectory_id] = outcome

    def run_tests(self, traj):
        """Compute all test results without caching or recording."""
        if not isinstance(traj, Trajectory):
            raise TrajectoryError(f"expected a Trajectory, got {type(traj).__name__}")
        bits = []
        for test in self.passfail:
            raw = test.predicate(traj)
            if isinstance(raw, (float, np.floating)) and not math.isfinite(raw):
                raise TestFunctionError(test.name, f"non-finite result {raw}")
            bit = int(bool(raw))
            bits.append(bit)
        values = []
        for test in self.indicative:
            v = float(test.functional(traj))
            if not math.isfinite(v):
                raise TestFunctionError(test.name, f"non-finite result {v}")
            values.append(v)
        return TestOutcome(traj.id, tuple(bits), tuple(values))

    def evaluate(self, traj):
        hit = self._cache.get(traj.id)
        if hit is not None:
            return hit
        outcome = self.run_tests(traj)
        with self._lock:
            hit = self._cache.get(traj.id)
            if hit is not None:
                return hit
            self.stats.record(outcome.passfail_bits, outcome.indicative_values)
            self._cache[traj.id] = outcome
        return outcome


def evaluate(suite, traj):
    """Memoised evaluation of every test in ``suite`` on ``traj``."""
    return suite.evaluate(traj)


def pass_count(outcome):
    return int(sum(outcome.passfail_bits))


def pass_rate(stats, test_index):
    n = int(stats.evaluations[test_index])
    if n == 0:
        return UNEVALUATED_PASS_RATE
    return int(stats.passes[test_index]) / n


def skewness(values):
    """Fisher-Pearson skewness with biased moments; 0 for degenerate samples."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 3:
        return 0.0
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    if m2 < 1e-12:
        return 0.0
    m3 = float(np.mean(d * d * d))
    return m3 / m2 ** 1.5


def check_outcome_dims(outcome, m, n):
    if outcome.m != m or outcome.n != n:
        raise DimensionError(f"outcome has (m, n) = ({outcome.m}, {outcome.n}), expected ({m}, {n})")
