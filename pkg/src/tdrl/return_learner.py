"""Trajectory-return learning from lexicographic comparison labels.

The return of a trajectory is an ensemble network applied to its vector of
indicative test results. Training minimises a Bradley-Terry cross-entropy
on labelled pairs plus a squared penalty on drift away from the returns
recorded at the start of the round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import AdamState, GradientBundle, Mlp, adam_step, combine_gn, should_early_stop
from .errors import DimensionError, EmptyBatchError, NonFiniteError, SnapshotError
from .lexicomp import LexicographicComparator, sample_pairs


class ReturnEnsemble:
    def __init__(self, n_inputs, hidden=(256, 256, 256), size=3, rng=None, members=None):
        if members is not None:
            self.members = list(members)
        else:
            if size < 1:
                raise ValueError("ensemble size must be >= 1")
            rng = rng if rng is not None else np.random.default_rng(0)
            widths = [n_inputs, *hidden, 1]
            self.members = [Mlp(widths, "relu", "identity", rng=rng) for _ in range(size)]
        widths = {tuple(m.widths) for m in self.members}
        if len(widths) != 1:
            raise ValueError("ensemble members must share an architecture")
        self.optims = [AdamState.for_params(m.params) for m in self.members]

    @property
    def size(self):
        return len(self.members)

    @property
    def n_inputs(self):
        return self.members[0].in_dim

    def member_outputs(self, x):
        """Array of shape ``(E,)`` for one vector or ``(E, B)`` for a batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_inputs:
            raise DimensionError(f"expected {self.n_inputs} indicative values, got {x.shape[-1]}")
        return np.stack([m.forward(x)[..., 0] for m in self.members])

    def __call__(self, x):
        return self.member_outputs(x).mean(axis=0)


def _values(outcome):
    return np.asarray(outcome.indicative_values, dtype=np.float64)


def return_of(ens, outcome):
    """Ensemble-mean return for one test outcome."""
    return float(ens(_values(outcome)))


def p_hat(r1, r2):
    """Probability that the first trajectory is closer to the all-pass set: sigmoid(r1 - r2)."""
    d = r1 - r2
    if d >= 0:
        return 1.0 / (1.0 + np.exp(-d))
    e = np.exp(d)
    return e / (1.0 + e)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ReturnSnapshot:
    """Per-trajectory returns captured before an update round.

    ``values[id]`` holds the member outputs, shape ``(E,)``.
    """

    values: dict

    @classmethod
    def capture(cls, ens, outcomes):
        outcomes = list(outcomes)
        if not outcomes:
            return cls({})
        out = ens.member_outputs(np.stack([_values(o) for o in outcomes]))
        return cls({o.trajectory_id: out[:, k].copy() for k, o in enumerate(outcomes)})

    def __getitem__(self, trajectory_id):
        try:
            return self.values[trajectory_id]
        except KeyError:
            raise SnapshotError(f"no snapshot return for trajectory {trajectory_id!r}") from None

    def __contains__(self, trajectory_id):
        return trajectory_id in self.values

    def mean(self, trajectory_id):
        return float(np.mean(self[trajectory_id]))


def _batch_arrays(batch):
    if not batch:
        raise EmptyBatchError("comparison batch is empty")
    x1 = np.stack([_values(t.outcome1) for t in batch])
    x2 = np.stack([_values(t.outcome2) for t in batch])
    mu = np.array([t.mu for t in batch], dtype=np.float64)
    return x1, x2, mu


def loss_dis(batch, ens):
    """Bradley-Terry cross-entropy, averaged over pairs and ensemble members.

    Every member scores the full batch with its own output. Returns the loss
    and one :class:`GradientBundle` per member.
    """
    x1, x2, mu = _batch_arrays(batch)
    B, E = len(mu), ens.size
    total, grads = 0.0, []
    for m in ens.members:
        r1, c1 = m.forward_cached(x1)
        r2, c2 = m.forward_cached(x2)
        d = (r1 - r2)[:, 0]
        total += float(-np.sum(mu * _log_sigmoid(d) + (1.0 - mu) * _log_sigmoid(-d))) / B
        # d/dd of the per-pair loss is sigmoid(d) - mu
        g = ((_sigmoid(d) - mu) / (B * E))[:, None]
        g1, _ = m.backward(c1, g)
        g2, _ = m.backward(c2, -g)
        grads.append(g1 + g2)
    loss = total / E
    if not np.isfinite(loss):
        raise NonFiniteError("distance loss is not finite")
    return loss, grads


def loss_penalty(batch, ens, snapshot, coef=0.1):
    """``coef`` times the squared drift of both pair members from the snapshot.

    Summed over the two trajectories of a pair, averaged over pairs and
    ensemble members; each member is compared with its own snapshot output.
    """
    if not batch:
        raise EmptyBatchError("comparison batch is empty")
    ids = [t.outcome1.trajectory_id for t in batch] + [t.outcome2.trajectory_id for t in batch]
    ref = np.stack([snapshot[i] for i in ids], axis=1)  # (E, 2B)
    x = np.stack([_values(t.outcome1) for t in batch] + [_values(t.outcome2) for t in batch])
    B, E = len(batch), ens.size
    total, grads = 0.0, []
    for k, m in enumerate(ens.members):
        r, cache = m.forward_cached(x)
        diff = r[:, 0] - ref[k]
        total += coef * float(np.sum(diff * diff)) / B
        g, _ = m.backward(cache, (2.0 * coef * diff / (B * E))[:, None])
        grads.append(g)
    loss = total / E
    if not np.isfinite(loss):
        raise NonFiniteError("penalty loss is not finite")
    return loss, grads


@dataclass
class ReturnRoundReport:
    steps: int = 0
    applied: int = 0
    early_stopped: bool = False
    loss_dis: float = 0.0
    loss_penalty: float = 0.0
    grad_norm_dis: float = 0.0
    grad_norm_pen: float = 0.0
    mean_mu: float = 0.5


def update_round(ens, trajectories, suite, strategy="ES", rng=None, *, update_num=50,
                 batch_size=128, lr=3e-4, penalty=0.1, k_es=10.0, comparator=None):
    """One return-learning round over the trajectory buffer.

    Captures the pre-round snapshot, freezes the test orderings, then takes
    up to ``update_num`` steps. Under ``"GN"`` the penalty gradient is capped
    at the distance-gradient norm; under ``"ES"`` the round halts (without
    applying that step) once the penalty gradient norm exceeds ``k_es`` times
    the distance-gradient norm. Norms are taken over all ensemble parameters.
    """
    strategy = strategy.upper()
    if strategy not in ("GN", "ES"):
        raise ValueError(f"unknown balancing strategy {strategy!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    trajectories = list(trajectories)
    outcomes = {t.id: suite.evaluate(t) for t in trajectories}
    comparator = comparator or LexicographicComparator.from_stats(suite.stats)
    snapshot = ReturnSnapshot.capture(ens, outcomes.values())
    counts = [len(m.params) for m in ens.members]
    report = ReturnRoundReport()
    for _ in range(update_num):
        pairs = sample_pairs(trajectories, batch_size, rng)
        batch = [comparator.triple(outcomes[a.id], outcomes[b.id]) for a, b in pairs]
        report.steps += 1
        l_dis, g_dis = loss_dis(batch, ens)
        l_pen, g_pen = loss_penalty(batch, ens, snapshot, penalty)
        g_dis = GradientBundle.concat(g_dis)
        g_pen = GradientBundle.concat(g_pen)
        report.loss_dis, report.loss_penalty = l_dis, l_pen
        report.grad_norm_dis, report.grad_norm_pen = g_dis.norm(), g_pen.norm()
        report.mean_mu = float(np.mean([t.mu for t in batch]))
        if strategy == "ES":
            if should_early_stop(g_dis, g_pen, k_es):
                report.early_stopped = True
                break
            total = g_dis + g_pen
        else:
            total = combine_gn(g_dis, g_pen)
        for m, opt, g in zip(ens.members, ens.optims, total.split(counts)):
            adam_step(m, g, opt, lr)
        report.applied += 1
    return report
