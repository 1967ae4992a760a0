"""Reverse-mode automatic differentiation on dense float64 arrays.

Nodes form a tape in creation order (parents always precede children), so a
single reverse sweep yields gradients for every differentiable leaf.  All
values are 64-bit floats; shapes are either vectors ``(n,)`` or batches
``(B, n)`` and every op states which it accepts.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Incompatible operand shapes; the message names the offending op."""


class GraphStateError(RuntimeError):
    """Graph used out of order, e.g. backward before forward."""


class Node:
    """One entry of the tape: a cached forward value plus vector-Jacobian
    closures back to its parents."""

    __slots__ = ("value", "parents", "vjps", "requires_grad", "name")

    def __init__(self, value, parents=(), vjps=(), requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Node, ...] = tuple(parents)
        self.vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = tuple(vjps)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape


def constant(value, name=None) -> Node:
    return Node(value, name=name)


def param(value, name=None) -> Node:
    """Differentiable leaf."""
    return Node(value, requires_grad=True, name=name)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Node, b: Node, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcastable"
            + (f" (node {a.name!r}/{b.name!r})" if a.name or b.name else "")
        )


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "add")
    return Node(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "sub")
    return Node(
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def neg(a) -> Node:
    a = _as_node(a)
    return Node(-a.value, (a,), (lambda g: -g,))


def mul(a, b) -> Node:
    """Elementwise product (with numpy broadcasting)."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "mul")
    return Node(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.shape),
            lambda g: _unbroadcast(g * a.value, b.shape),
        ),
    )


def scale(a, k: float) -> Node:
    a = _as_node(a)
    k = float(k)
    return Node(a.value * k, (a,), (lambda g: g * k,))


def linear(x, w, b=None) -> Node:
    """Affine map: ``w @ x + b`` for vectors, ``x @ w.T + b`` row-wise for
    batches.  ``w`` is ``(m, n)``, ``b`` is ``(m,)`` or None."""
    x, w = _as_node(x), _as_node(w)
    if w.value.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-d, got {w.shape}")
    m, n = w.shape
    if x.value.ndim == 1:
        if x.shape[0] != n:
            raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
        y = w.value @ x.value
        parents = [x, w]
        vjps = [lambda g: w.value.T @ g, lambda g: np.outer(g, x.value)]
    elif x.value.ndim == 2:
        if x.shape[1] != n:
            raise ShapeError(f"linear: batch {x.shape} incompatible with weight {w.shape}")
        y = x.value @ w.value.T
        parents = [x, w]
        vjps = [lambda g: g @ w.value, lambda g: g.T @ x.value]
    else:
        raise ShapeError(f"linear: input must be 1-d or 2-d, got {x.shape}")
    if b is None:
        return Node(y, parents, vjps)
    b = _as_node(b)
    if b.shape != (m,):
        raise ShapeError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    parents.append(b)
    vjps.append(lambda g: _unbroadcast(g, b.shape))
    return Node(y + b.value, parents, vjps)


def tanh(a) -> Node:
    a = _as_node(a)
    t = np.tanh(a.value)
    return Node(t, (a,), (lambda g: g * (1.0 - t * t),))


def sigmoid(a) -> Node:
    a = _as_node(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    return Node(s, (a,), (lambda g: g * s * (1.0 - s),))


def silu(a) -> Node:
    a = _as_node(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    y = a.value * s
    return Node(y, (a,), (lambda g: g * (s + y * (1.0 - s)),))


def identity(a) -> Node:
    a = _as_node(a)
    return Node(a.value, (a,), (lambda g: g,))


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "silu": silu, "identity": identity}

# Tight slope bounds used for compositional Lipschitz estimates.
ACTIVATION_SLOPE_BOUND = {
    "tanh": 1.0,
    "sigmoid": 0.25,
    "silu": 1.0998,
    "identity": 1.0,
}


def asum(a, axis: Optional[int] = None) -> Node:
    a = _as_node(a)
    y = a.value.sum(axis=axis)
    shp = a.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shp).astype(np.float64)
        return np.broadcast_to(np.expand_dims(g, axis), shp).astype(np.float64)

    return Node(y, (a,), (vjp,))


def amean(a, axis: Optional[int] = None) -> Node:
    a = _as_node(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(asum(a, axis=axis), 1.0 / n)


def slice_last(a, start: int, stop: int) -> Node:
    """Slice along the last axis."""
    a = _as_node(a)
    y = a.value[..., start:stop]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[..., start:stop] = g
        return out

    return Node(y, (a,), (vjp,))


def concat_last(a, b) -> Node:
    """Concatenate along the last axis."""
    a, b = _as_node(a), _as_node(b)
    if a.value.ndim != b.value.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: shapes {a.shape} and {b.shape} do not align")
    y = np.concatenate([a.value, b.value], axis=-1)
    na = a.shape[-1]
    return Node(y, (a, b), (lambda g: g[..., :na], lambda g: g[..., na:]))


def dot_rows(a, b) -> Node:
    """Row-wise inner product; plain dot for vectors."""
    return asum(mul(a, b), axis=-1)


def sumsq_rows(a) -> Node:
    """Row-wise squared norm; plain squared norm for vectors."""
    a = _as_node(a)
    return asum(mul(a, a), axis=-1)


def backprop(root: Node, seed=None) -> dict[int, np.ndarray]:
    """One reverse sweep from `root`; returns id(node) -> gradient for every
    node with requires_grad on the tape."""
    if seed is None:
        seed = np.ones_like(root.value)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != root.shape:
        raise ShapeError(f"backprop: seed shape {seed.shape} != root shape {root.shape}")

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + contrib
            else:
                grads[id(parent)] = np.asarray(contrib, dtype=np.float64)
    return grads


class Graph:
    """A differentiable map from named inputs to a single output.

    `fn` receives one Node per input name and returns the root Node; it is
    re-traced on every forward so intermediate values are always cached for
    the following backward sweep.
    """

    def __init__(self, fn: Callable[..., Node], inputs: Sequence[str]):
        self.fn = fn
        self.inputs = list(inputs)
        self._leaves: Optional[dict[str, Node]] = None
        self._root: Optional[Node] = None

    def forward(self, bindings: dict[str, np.ndarray]) -> np.ndarray:
        missing = [k for k in self.inputs if k not in bindings]
        if missing:
            raise KeyError(f"missing bindings for inputs: {missing}")
        leaves = {k: param(bindings[k], name=k) for k in self.inputs}
        self._root = self.fn(**leaves)
        self._leaves = leaves
        return self._root.value

    def backward(self, seed=None) -> dict[str, np.ndarray]:
        if self._root is None or self._leaves is None:
            raise GraphStateError("backward called before forward")
        grads = backprop(self._root, seed)
        return {
            k: grads.get(id(leaf), np.zeros_like(leaf.value))
            for k, leaf in self._leaves.items()
        }
