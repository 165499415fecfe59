"""Fully connected networks with hand-written reverse mode, Adam, and the
two penalty-balancing rules (gradient-norm capping and early stopping).

Only the fixed feed-forward architectures used by the learners live here;
there is no general autodiff graph.

Checkpoint format (``.npz``, version 1)::

    meta   0-d unicode array holding JSON:
           {"format": "tdrl-mlp", "version": 1, "widths": [...],
            "hidden": "relu", "output": "identity"}
    W{k}   float64 array, shape (widths[k], widths[k+1]), row-major
    b{k}   float64 array, shape (widths[k+1],)

Layer ``k`` computes ``x @ W{k} + b{k}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionError, NonFiniteError

FORMAT_NAME = "tdrl-mlp"
FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "identity", "tanh")


def _activate(tag, z):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(tag, z, a, upstream):
    if tag == "relu":
        return upstream * (z > 0.0)
    if tag == "tanh":
        return upstream * (1.0 - a * a)
    return upstream


class GradientBundle:
    """Per-parameter gradient arrays, ordered ``W0, b0, W1, b1, ...``."""

    def __init__(self, arrays):
        self.arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        self._norm = None

    def norm(self):
        if self._norm is None:
            self._norm = float(np.sqrt(sum(float(np.vdot(a, a)) for a in self.arrays)))
        return self._norm

    def scaled(self, factor):
        return GradientBundle([a * factor for a in self.arrays])

    def __add__(self, other):
        if len(other.arrays) != len(self.arrays):
            raise DimensionError("gradient bundles have different parameter counts")
        out = []
        for a, b in zip(self.arrays, other.arrays):
            if a.shape != b.shape:
                raise DimensionError(f"gradient shape {a.shape} vs {b.shape}")
            out.append(a + b)
        return GradientBundle(out)

    def __len__(self):
        return len(self.arrays)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays)

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a, dtype=np.float64) for a in arrays])

    @classmethod
    def concat(cls, bundles):
        """Join several bundles (e.g. ensemble members) into one parameter vector."""
        arrays = []
        for b in bundles:
            arrays.extend(b.arrays)
        return cls(arrays)

    def split(self, counts):
        out, start = [], 0
        for c in counts:
            out.append(GradientBundle(self.arrays[start:start + c]))
            start += c
        if start != len(self.arrays):
            raise DimensionError("split counts do not cover the bundle")
        return out


class Mlp:
    """Feed-forward network ``widths[0] -> ... -> widths[-1]``.

    Hidden layers use ``hidden`` activation, the last layer uses ``output``.
    Inputs may be a single vector ``(d,)`` or a batch ``(B, d)``.
    """

    def __init__(self, widths, hidden="relu", output="identity", rng=None,
                 zero_output=False, weights=None, biases=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise DimensionError(f"invalid layer widths {widths}")
        if hidden not in _ACTIVATIONS or output not in _ACTIVATIONS:
            raise ValueError(f"unknown activation tag ({hidden!r}, {output!r})")
        self.widths = widths
        self.hidden = hidden
        self.output = output
        if weights is not None:
            self.weights = [np.array(w, dtype=np.float64) for w in weights]
            self.biases = [np.array(b, dtype=np.float64) for b in biases]
            self._check_shapes()
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            if zero_output and k == len(widths) - 2:
                w = np.zeros_like(w)
                b = np.zeros_like(b)
            self.weights.append(w)
            self.biases.append(b)

    @classmethod
    def zeros(cls, widths, hidden="relu", output="identity"):
        ws = [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])]
        bs = [np.zeros(b) for b in widths[1:]]
        return cls(widths, hidden, output, weights=ws, biases=bs)

    def _check_shapes(self):
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("layer count does not match widths")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[k], self.widths[k + 1]) or b.shape != (self.widths[k + 1],):
                raise DimensionError(f"layer {k} has shapes {w.shape}, {b.shape}")

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, arrays):
        if len(arrays) != 2 * len(self.weights):
            raise DimensionError("wrong number of parameter arrays")
        for k in range(len(self.weights)):
            self.weights[k] = np.array(arrays[2 * k], dtype=np.float64)
            self.biases[k] = np.array(arrays[2 * k + 1], dtype=np.float64)
        self._check_shapes()

    def num_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return Mlp(self.widths, self.hidden, self.output,
                   weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases])

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise DimensionError(f"expected input width {self.in_dim}, got shape {x.shape}")
        return x

    def forward(self, x):
        a = self._check_input(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = _activate(self.output if k == last else self.hidden, a @ w + b)
        return a

    __call__ = forward

    def forward_cached(self, x):
        """Forward pass that also returns what :meth:`backward` needs."""
        a = self._check_input(x)
        inputs, pre, post = [], [], []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            a = _activate(self.output if k == last else self.hidden, z)
            pre.append(z)
            post.append(a)
        return a, (inputs, pre, post)

    def backward(self, cache, upstream):
        """Gradients of ``<upstream, output>`` w.r.t. parameters and input.

        Returns ``(GradientBundle, input_gradient)``. Batched upstream rows
        are summed into the parameter gradients.
        """
        inputs, pre, post = cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != post[-1].shape:
            raise DimensionError(f"upstream shape {g.shape} != output shape {post[-1].shape}")
        last = len(self.weights) - 1
        grads = [None] * (2 * len(self.weights))
        for k in range(last, -1, -1):
            tag = self.output if k == last else self.hidden
            g = _activation_grad(tag, pre[k], post[k], g)
            x = inputs[k]
            if x.ndim == 1:
                grads[2 * k] = np.outer(x, g)
                grads[2 * k + 1] = g.copy()
            else:
                grads[2 * k] = x.T @ g
                grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return GradientBundle(grads), g

    def to_arrays(self):
        meta = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "widths": self.widths,
                "hidden": self.hidden, "output": self.output}
        arrays = {"meta": np.array(json.dumps(meta))}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{k}"] = w
            arrays[f"b{k}"] = b
        return arrays

    @classmethod
    def from_arrays(cls, arrays, name="mlp"):
        try:
            meta = json.loads(str(arrays["meta"]))
        except KeyError:
            raise CheckpointError(name, "missing meta record") from None
        if meta.get("format") != FORMAT_NAME or meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(name, f"unsupported format {meta.get('format')}/{meta.get('version')}")
        n = len(meta["widths"]) - 1
        try:
            ws = [arrays[f"W{k}"] for k in range(n)]
            bs = [arrays[f"b{k}"] for k in range(n)]
        except KeyError as exc:
            raise CheckpointError(name, f"missing parameter array {exc}") from None
        return cls(meta["widths"], meta["hidden"], meta["output"], weights=ws, biases=bs)


def forward(net, x):
    return net.forward(x)


def grad(net, x, upstream):
    """Analytic gradient of ``<upstream, forward(net, x)>`` w.r.t. all parameters."""
    _, cache = net.forward_cached(x)
    bundle, _ = net.backward(cache, upstream)
    return bundle


def save_mlp(net, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **net.to_arrays())


def load_mlp(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(str(path), "file not found")
    with np.load(path, allow_pickle=False) as data:
        return Mlp.from_arrays({k: data[k] for k in data.files}, name=str(path))


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kwargs)

    def copy(self):
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.step, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place.

    ``params`` is an :class:`Mlp` or a list of arrays. Returns ``(params, state)``.
    """
    arrays = params.params if isinstance(params, Mlp) else params
    g_arrays = grads.arrays if isinstance(grads, GradientBundle) else grads
    if len(g_arrays) != len(arrays) or len(state.m) != len(arrays):
        raise DimensionError("Adam state, gradients and parameters disagree in length")
    for g in g_arrays:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to adam_step")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(arrays, g_arrays, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def combine_gn(g_dis, g_pen):
    """Sum the two gradients, capping the penalty part at the distance-gradient norm."""
    n_dis, n_pen = g_dis.norm(), g_pen.norm()
    if n_pen > n_dis:
        return g_dis + g_pen.scaled(n_dis / n_pen)
    return g_dis + g_pen


def should_early_stop(g_dis, g_pen, k_es):
    if k_es <= 0:
        raise ValueError("k_es must be positive")
    return g_pen.norm() > k_es * g_dis.norm()
