"""Lexicographic trajectory comparison and pair sampling."""

from __future__ import annotations

from dataclasses import dataclass


from .errors import DimensionError, InsufficientDataError
from .testkit import TestOutcome, pass_count, pass_rate, skewness


@dataclass(frozen=True)
class ComparisonTriple:
    outcome1: TestOutcome
    outcome2: TestOutcome
    mu: float

    def __post_init__(self):
        if self.mu not in (0.0, 0.5, 1.0):
            raise ValueError(f"mu must be 0, 0.5 or 1, got {self.mu}")


def order_passfail(stats):
    """Pass-fail test indices from hardest (lowest pass rate) to easiest."""
    rates = [pass_rate(stats, i) for i in range(stats.m)]
    return sorted(range(stats.m), key=lambda i: (rates[i], i))


def order_indicative(stats):
    """Indicative test indices from most to least positively skewed history."""
    skews = [skewness(h) for h in stats.histories]
    return sorted(range(stats.n), key=lambda i: (-skews[i], i))


class LexicographicComparator:
    """Comparator with test orderings frozen from a stats snapshot.

    Build one per labelling round; :func:`compare` rebuilds the orderings on
    every call.
    """

    def __init__(self, pf_order, ind_order):
        self.pf_order = list(pf_order)
        self.ind_order = list(ind_order)

    @classmethod
    def from_stats(cls, stats):
        return cls(order_passfail(stats), order_indicative(stats))

    def __call__(self, o1, o2):
        m, n = len(self.pf_order), len(self.ind_order)
        for o in (o1, o2):
            if o.m != m or o.n != n:
                raise DimensionError(
                    f"outcome dimensions ({o.m}, {o.n}) do not match suite ({m}, {n})")
        c1, c2 = pass_count(o1), pass_count(o2)
        if c1 == m and c2 == m:
            return 0.5
        if c1 != c2:
            return 1.0 if c1 > c2 else 0.0
        for i in self.pf_order:
            b1, b2 = o1.passfail_bits[i], o2.passfail_bits[i]
            if b1 != b2:
                return 1.0 if b1 > b2 else 0.0
        for j in self.ind_order:
            v1, v2 = o1.indicative_values[j], o2.indicative_values[j]
            if v1 > v2:
                return 1.0
            if v1 < v2:
                return 0.0
        return 0.5

    def triple(self, o1, o2):
        return ComparisonTriple(o1, o2, self(o1, o2))


def compare(o1, o2, stats):
    """mu in {0, 0.5, 1}: 1 when ``o1`` is judged closer to the all-pass set."""
    return LexicographicComparator.from_stats(stats)(o1, o2)


def sample_pairs(buffer, count, rng):
    """``count`` ordered pairs of distinct buffer entries, i.i.d. across pairs."""
    items = list(buffer)
    if len(items) < 2:
        raise InsufficientDataError(f"need at least 2 trajectories to form pairs, have {len(items)}")
    first = rng.integers(0, len(items), size=count)
    offset = rng.integers(1, len(items), size=count)
    second = (first + offset) % len(items)
    return [(items[i], items[j]) for i, j in zip(first, second)]
