"""A deliberately small reverse-mode autodiff over numpy arrays.

Only the operations used by the selector, decoder and classifier heads are
provided: embedding lookup, affine maps, ReLU, (masked) softmax, weighted
sums, stacking, MSE and cross-entropy. Everything runs in float64.

Typical use::

    def build():
        h = affine(lookup(table, idx), W, b)
        return cross_entropy(h, labels)

    loss = forward_backward(build, params)
    sgd.step()
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np


class Parameter:
    def __init__(self, name: str, values, trainable: bool = True):
        self.name = name
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.trainable = trainable

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def node(self) -> "Node":
        return Node(self.values, (), None, "param", param=self)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape}, trainable={self.trainable})"


class Node:
    __slots__ = ("value", "parents", "backward", "op", "param")

    def __init__(self, value, parents, backward, op, param=None):
        self.value = value
        self.parents = parents
        self.backward = backward
        self.op = op
        self.param = param


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    if isinstance(x, Parameter):
        return x.node()
    return Node(np.asarray(x, dtype=np.float64), (), None, "const")


def _all_finite(a) -> bool:
    # max/min propagate NaN and reach +-inf, and never overflow
    a = np.asarray(a)
    return a.size == 0 or bool(np.isfinite(np.maximum.reduce(a, axis=None)) & np.isfinite(np.minimum.reduce(a, axis=None)))


def _make(value, parents, backward, op) -> Node:
    if not _all_finite(value):
        raise FloatingPointError(f"non-finite value produced by '{op}'")
    return Node(value, parents, backward, op)


# --- operations --------------------------------------------------------------

def lookup(table: Parameter, indices) -> Node:
    """Row gather ``table[indices]``; the gradient scatters back with accumulation."""
    idx = np.asarray(indices, dtype=np.int64)
    K = table.values.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise IndexError(f"lookup index outside [0, {K}) for table {table.name!r}")
    tnode = table.node()

    def backward(g):
        acc = np.zeros_like(table.values)
        np.add.at(acc, idx, g)
        return (acc,)

    return _make(table.values[idx], (tnode,), backward, "lookup")


def affine(x, W, b=None) -> Node:
    """``x @ W + b`` over the last axis of ``x``. A 1-D ``W`` maps to a scalar per row."""
    xn, wn = _as_node(x), _as_node(W)
    parents = (xn, wn) if b is None else (xn, wn, _as_node(b))
    xv = xn.value
    # flatten leading axes so one GEMM handles every row
    out = (xv.reshape(-1, xv.shape[-1]) @ wn.value).reshape(xv.shape[:-1] + wn.value.shape[1:])
    if b is not None:
        out = out + parents[2].value

    def backward(g):
        xv, wv = xn.value, wn.value
        lead = xv.reshape(-1, xv.shape[-1])
        if wv.ndim == 1:
            gx = g[..., None] * wv
            gw = lead.T @ g.reshape(-1)
            gb = np.sum(g)
        else:
            g2 = g.reshape(-1, wv.shape[1])
            gx = (g2 @ wv.T).reshape(xv.shape)
            gw = lead.T @ g2
            gb = g2.sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, np.reshape(gb, parents[2].value.shape))

    return _make(out, parents, backward, "affine")


def relu(x) -> Node:
    xn = _as_node(x)
    on = xn.value > 0

    def backward(g):
        return (g * on,)

    return _make(np.where(on, xn.value, 0.0), (xn,), backward, "relu")


def softmax(x, axis: int = -1, mask=None) -> Node:
    """Max-shifted softmax. Positions where ``mask`` is False get weight exactly 0."""
    xn = _as_node(x)
    v = xn.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax mask excludes every entry of some row")
        shifted = np.where(mask, v, -np.inf)
    else:
        shifted = v
    shifted = shifted - np.max(shifted, axis=axis, keepdims=True)
    e = np.exp(shifted)  # exp(-inf) == 0 for masked entries
    s = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make(s, (xn,), backward, "softmax")


def weighted_sum(weights, values) -> Node:
    """``out[..., e] = sum_l weights[..., l] * values[..., l, e]``."""
    wn, vn = _as_node(weights), _as_node(values)

    def backward(g):
        gw = np.einsum("...e,...le->...l", g, vn.value)
        gv = wn.value[..., None] * g[..., None, :]
        return (gw, gv)

    out = np.einsum("...l,...le->...e", wn.value, vn.value)
    return _make(out, (wn, vn), backward, "weighted_sum")


def stack(nodes, axis: int) -> Node:
    ns = tuple(_as_node(n) for n in nodes)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ns)))

    return _make(np.stack([n.value for n in ns], axis=axis), ns, backward, "stack")


def add(a, b) -> Node:
    an, bn = _as_node(a), _as_node(b)
    return _make(an.value + bn.value, (an, bn), lambda g: (g, g), "add")


def scale(a, c: float) -> Node:
    an = _as_node(a)
    return _make(an.value * c, (an,), lambda g: (g * c,), "scale")


def mse(pred, target) -> Node:
    """Mean of squared errors over every element."""
    pn = _as_node(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pn.value.shape:
        raise ValueError(f"mse shape mismatch: {pn.value.shape} vs {t.shape}")
    diff = pn.value - t
    n = diff.size

    def backward(g):
        return (g * 2.0 * diff / n,)

    return _make(np.array(np.sum(diff * diff) / n), (pn,), backward, "mse")


def cross_entropy(logits, labels) -> Node:
    """Mean softmax cross-entropy of ``logits`` (N x C) against integer ``labels``."""
    ln = _as_node(logits)
    y = np.asarray(labels, dtype=np.int64)
    z = ln.value - np.max(ln.value, axis=-1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    n = y.shape[0]
    rows = np.arange(n)

    def backward(g):
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return (g * grad / n,)

    return _make(np.array(-np.sum(logp[rows, y]) / n), (ln,), backward, "cross_entropy")


# --- driver ------------------------------------------------------------------

def _topo_order(root: Node):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(param) into every trainable Parameter reached from ``loss``."""
    if np.ndim(loss.value) != 0:
        raise ValueError("backward needs a scalar loss")
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param is not None:
            if node.param.trainable:
                node.param.grad += g
            continue
        if node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent.op == "const":
                continue
            if not _all_finite(pg):
                raise FloatingPointError(f"non-finite gradient flowing out of '{node.op}'")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def forward_backward(build: Callable[[], Node], params: Iterable[Parameter]) -> float:
    """Zero gradients, evaluate ``build()`` and backpropagate. Returns the loss."""
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = build()
    if not np.isfinite(loss.value):
        raise FloatingPointError("loss is non-finite")
    backward(loss)
    return float(loss.value)


def sgd_step(params: Iterable[Parameter], learning_rate: float) -> None:
    for p in params:
        if p.trainable:
            p.values -= learning_rate * p.grad


class SGD:
    """Plain SGD with optional heavy-ball momentum; frozen parameters are skipped."""

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.0):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self._velocity):
            if self.momentum:
                v *= self.momentum
                v += p.grad
                p.values -= self.lr * v
            else:
                p.values -= self.lr * p.grad


@dataclass
class GradCheckReport:
    parameter: str
    max_relative_error: float
    worst_coordinate: tuple
    passed: bool
    checked: int = 0


def grad_check(
    build: Callable[[], Node],
    params: Iterable[Parameter],
    threshold: float = 1e-4,
    step: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
    abs_floor: float = 1e-6,
    analytic: Optional[dict] = None,
) -> list[GradCheckReport]:
    """Compare analytic gradients with central finite differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    Parameters with more than ``max_coords`` entries are checked on a seeded
    random subsample. ``analytic`` overrides the computed gradients (name ->
    array), which is how negative controls inject a wrong gradient.
    """
    params = [p for p in params if p.trainable]
    forward_backward(build, params)
    grads = {p.name: p.grad.copy() for p in params}
    if analytic:
        grads.update({k: np.asarray(v, dtype=np.float64) for k, v in analytic.items()})
    rng = np.random.default_rng(seed)
    reports = []
    for p in params:
        flat = p.values.reshape(-1)
        if flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        else:
            coords = np.arange(flat.size)
        a_flat = grads[p.name].reshape(-1)
        worst, worst_at = 0.0, ()
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = float(build().value)
            flat[c] = orig - step
            down = float(build().value)
            flat[c] = orig
            num = (up - down) / (2.0 * step)
            a = a_flat[c]
            err = abs(a - num) / max(abs(a), abs(num), abs_floor)
            if err > worst or not worst_at:
                worst, worst_at = err, np.unravel_index(int(c), p.values.shape)
        reports.append(
            GradCheckReport(
                p.name, worst, tuple(int(i) for i in worst_at), worst < threshold, len(coords)
            )
        )
    return reports
