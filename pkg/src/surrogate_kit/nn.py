"""A small reverse-mode autodiff core over float64 numpy arrays.

Every primitive returns a :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them. ``backward`` walks the
recorded graph in reverse topological order, visiting each node once.
Gradients accumulate additively, so a tensor used twice receives both
contributions.
"""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import np_rng

CHECKPOINT_FORMAT = "surrogate-kit-checkpoint/1"


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.ravel()

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _node(data, parents, backward):
    track = _needs_grad(*parents)
    return Tensor(data, requires_grad=track, _parents=parents if track else (),
                  _backward=backward if track else None)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(out: Tensor, grad=None) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every tracked tensor."""
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    out._accumulate(np.ones_like(out.data) if grad is None else grad)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or W.data.ndim != 2 or b.data.shape != (W.shape[1],) or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: incompatible shapes x{x.shape} W{W.shape} b{b.shape}")

    def back(g):
        if x.requires_grad:
            x._accumulate(g @ W.data.T)
        if W.requires_grad:
            W._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _node(x.data @ W.data + b.data, (x, W, b), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: x._accumulate(g * mask))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: x._accumulate(g * (1.0 - y * y)))


def softplus(x: Tensor) -> Tensor:
    d = x.data
    y = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * d))
    return _node(y, (x,), lambda g: x._accumulate(g * sig))


ACTIVATIONS = {"relu": relu, "tanh": tanh}


def concat(xs, axis=-1) -> Tensor:
    xs = [constant(x) for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accumulate(part)

    return _node(data, tuple(xs), back)


def sum_pool(x: Tensor, segments=None, n_segments=None) -> Tensor:
    """Sum rows of ``x`` per segment id; without segments, sum every row."""
    if x.data.ndim != 2:
        raise ShapeError(f"sum_pool: expected a 2-d sequence, got shape {x.shape}")
    if segments is None:
        return _node(x.data.sum(axis=0), (x,), lambda g: x._accumulate(np.broadcast_to(g, x.shape)))
    segments = np.asarray(segments)
    if segments.shape != (x.shape[0],):
        raise ShapeError(f"sum_pool: {segments.shape[0]} segment ids for {x.shape[0]} rows")
    n = int(segments.max()) + 1 if n_segments is None else n_segments
    out = np.zeros((n, x.shape[1]))
    np.add.at(out, segments, x.data)
    return _node(out, (x,), lambda g: x._accumulate(g[segments]))


def embedding_lookup(table: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table{table.shape}")

    def back(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, index, g)
        table._accumulate(acc)

    return _node(table.data[index], (table,), back)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,), lambda g: x._accumulate(np.full(x.shape, g / n)))


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def mape(y_pred: float, y_true: float) -> float:
    if not y_true > 0:
        raise ValueError(f"mape needs a positive true value, got {y_true}")
    return abs(y_pred - y_true) / y_true


def mape_grad(y_pred: float, y_true: float) -> float:
    if not y_true > 0:
        raise ValueError(f"mape needs a positive true value, got {y_true}")
    return float(np.sign(y_pred - y_true)) / y_true


def mean_mape(preds, trues) -> float:
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(trues, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"mean_mape: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("mean_mape: empty input")
    if np.any(t <= 0):
        raise ValueError("mean_mape: targets must be positive")
    return math.fsum(np.abs(p - t) / t) / p.size


def mape_loss(pred: Tensor, trues) -> Tensor:
    """Mean MAPE as a graph node; subgradient 0 where pred == true."""
    t = np.asarray(trues, dtype=np.float64).reshape(pred.shape)
    if np.any(t <= 0):
        raise ValueError("mape_loss: targets must be positive")
    diff = pred.data - t
    n = diff.size
    value = np.asarray(np.mean(np.abs(diff) / t))
    return _node(value, (pred,), lambda g: pred._accumulate(g * np.sign(diff) / t / n))


class ParamStore(OrderedDict):
    """Named trainable tensors in insertion order."""

    def add(self, name: str, data) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def grads(self) -> dict:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.items()}

    def arrays(self) -> dict:
        return {k: t.data.copy() for k, t in self.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, t in self.items():
            out.add(k, t.data.copy())
        return out

    def load(self, arrays: dict) -> None:
        for k, t in self.items():
            if k not in arrays or np.shape(arrays[k]) != t.shape:
                raise ShapeError(f"cannot load {k!r}: expected shape {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``store`` and ``state``.

    ``store`` maps names to Tensors (or raw arrays updated in place).
    """
    if set(grads) != set(store):
        raise ShapeError(f"adam_step: gradient names {sorted(grads)} do not match {sorted(store)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, w in store.items():
        arr = w.data if isinstance(w, Tensor) else w
        g = grads[name]
        if np.shape(g) != arr.shape:
            raise ShapeError(f"adam_step: gradient for {name!r} has shape {np.shape(g)}, weight {arr.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def finite_difference_check(model_fn, store, inputs=(), tolerance=1e-4, step=1e-5, floor=1e-7):
    """Compare reverse-mode gradients to central differences.

    ``model_fn(store, inputs)`` must return a scalar Tensor. Every store entry
    and every tensor in ``inputs`` with ``requires_grad`` is checked
    coordinate by coordinate. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    tensors = list(store.items()) + [
        (t.name or f"input{i}", t) for i, t in enumerate(inputs) if t.requires_grad
    ]
    for _, t in tensors:
        t.grad = None
    out = model_fn(store, inputs)
    backward(out)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors}
    worst, worst_at, count = 0.0, None, 0
    for name, t in tensors:
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = model_fn(store, inputs).item()
            flat[i] = orig - step
            fm = model_fn(store, inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            count += 1
            if err > worst:
                worst, worst_at = err, (name, i, a, num)
    for _, t in tensors:
        t.grad = None
    return GradCheckReport(worst, worst_at, count, tolerance)


def save_checkpoint(path, spec: dict, store: ParamStore, meta: dict) -> None:
    header = {"format": CHECKPOINT_FORMAT, "spec": spec, "meta": meta}
    weights = {k: {"shape": list(t.shape), "values": t.data.ravel().tolist()} for k, t in store.items()}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        f.write(json.dumps(weights) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(spec, arrays, meta)``."""
    with open(path) as f:
        lines = f.read().split("\n")
    try:
        header = json.loads(lines[0])
    except (json.JSONDecodeError, IndexError):
        raise ValueError(f"{path}: not a checkpoint file") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    weights = json.loads(lines[1])
    arrays = OrderedDict(
        (k, np.array(w["values"], dtype=np.float64).reshape(w["shape"])) for k, w in weights.items()
    )
    return header["spec"], arrays, header["meta"]


def init_rng(seed: int) -> np.random.Generator:
    return np_rng(seed, "init")
