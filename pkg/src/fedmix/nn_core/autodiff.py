"""Minimal reverse-mode differentiation over numpy arrays.

This is not a general autodiff system. It supports exactly the operations the
Q-networks and the mixing head are built from: affine maps, gated-recurrence
arithmetic, elementwise nonlinearities and a few reductions. Everything is
float64. Inputs may be plain ndarrays (constants) or :class:`Node` leaves;
an op returns a ``Node`` iff at least one input is a ``Node``, so the same
forward code serves both inference and training.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np


class Node:
    """A value in the computation graph plus its accumulated gradient."""

    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._vjps = tuple(vjps)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Node(shape={self.value.shape})"


def value_of(x) -> np.ndarray:
    """Raw ndarray behind ``x``, whether it is a Node or a constant."""
    if isinstance(x, Node):
        return x.value
    if isinstance(x, np.ndarray):
        return x
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _build(out_value, inputs_and_vjps) -> Node | np.ndarray:
    pairs = [(x, vjp) for x, vjp in inputs_and_vjps if isinstance(x, Node)]
    if not pairs:
        return out_value
    return Node(out_value, [p for p, _ in pairs], [v for _, v in pairs])


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _build(out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _build(out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(-g, bv.shape)),
    ])


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _build(out, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def linear(x, w, b=None):
    """Affine map ``x @ w.T (+ b)``.

    ``x`` may be a single vector ``(in,)`` or a batch ``(batch, in)``;
    ``w`` is ``(out, in)`` and ``b`` is ``(out,)``.
    """
    xv, wv = value_of(x), value_of(w)
    out = xv @ wv.T
    if b is not None:
        bv = value_of(b)
        out = out + bv

    def vjp_x(g):
        return g @ wv

    def vjp_w(g):
        if xv.ndim == 1:
            return np.outer(g, xv)
        return g.T @ xv

    pairs = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        pairs.append((b, lambda g: _unbroadcast(g, value_of(b).shape)))
    return _build(out, pairs)


def tanh(x):
    xv = value_of(x)
    out = np.tanh(xv)
    return _build(out, [(x, lambda g: g * (1.0 - out * out))])


def _sigmoid_value(xv: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(xv))
    return np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    xv = value_of(x)
    out = _sigmoid_value(xv)
    return _build(out, [(x, lambda g: g * out * (1.0 - out))])


def relu(x):
    xv = value_of(x)
    out = np.maximum(xv, 0.0)
    return _build(out, [(x, lambda g: g * (xv > 0))])


def elu(x):
    xv = value_of(x)
    expm = np.expm1(np.minimum(xv, 0.0))
    out = np.where(xv > 0, xv, expm)
    return _build(out, [(x, lambda g: g * np.where(xv > 0, 1.0, expm + 1.0))])


def absval(x):
    xv = value_of(x)
    out = np.abs(xv)
    return _build(out, [(x, lambda g: g * np.sign(xv))])


def sum_all(x):
    xv = value_of(x)
    out = np.asarray(xv.sum())
    return _build(out, [(x, lambda g: np.broadcast_to(g, xv.shape).copy())])


def sum_axis(x, axis: int):
    xv = value_of(x)
    out = xv.sum(axis=axis)

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy()

    return _build(out, [(x, vjp)])


def reshape(x, shape):
    xv = value_of(x)
    out = xv.reshape(shape)
    return _build(out, [(x, lambda g: np.asarray(g).reshape(xv.shape))])


def stack_last(xs: Sequence):
    """Stack equal-shape values along a new trailing axis."""
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=-1)

    def make_vjp(i):
        return lambda g: np.asarray(g)[..., i]

    return _build(out, [(x, make_vjp(i)) for i, x in enumerate(xs)])


def _grad_matmul(pre: np.ndarray, inp: np.ndarray) -> np.ndarray:
    return np.outer(pre, inp) if pre.ndim == 1 else pre.T @ inp


def _grad_bias(pre: np.ndarray) -> np.ndarray:
    return pre if pre.ndim == 1 else pre.sum(axis=0)


def gru_cell(x, h, wz, uz, bz, wr, ur, br, wc, uc, bc):
    """Fused gated-recurrence step with a hand-derived backward pass.

    z = sigmoid(x Wz^T + h Uz^T + bz)
    r = sigmoid(x Wr^T + h Ur^T + br)
    c = tanh(x Wc^T + (r*h) Uc^T + bc)
    h' = (1 - z)*h + z*c

    One graph node instead of ~16, which is what makes episode-batch
    backpropagation through time affordable in pure numpy. The gradient
    formulas are exercised against finite differences by the test suite.
    """
    inputs = (x, h, wz, uz, bz, wr, ur, br, wc, uc, bc)
    xv, hv, wzv, uzv, bzv, wrv, urv, brv, wcv, ucv, bcv = \
        (value_of(v) for v in inputs)
    z = _sigmoid_value(xv @ wzv.T + hv @ uzv.T + bzv)
    r = _sigmoid_value(xv @ wrv.T + hv @ urv.T + brv)
    rh = r * hv
    c = np.tanh(xv @ wcv.T + rh @ ucv.T + bcv)
    out = hv + z * (c - hv)

    if not any(isinstance(v, Node) for v in inputs):
        return out

    cache: dict[str, object] = {"g": None, "grads": None}

    def grads_for(g):
        if cache["g"] is not g:
            dcpre = g * z * (1.0 - c * c)
            dzpre = g * (c - hv) * z * (1.0 - z)
            d_rh = dcpre @ ucv
            drpre = d_rh * hv * r * (1.0 - r)
            cache["grads"] = {
                "x": dcpre @ wcv + drpre @ wrv + dzpre @ wzv,
                "h": g * (1.0 - z) + d_rh * r + drpre @ urv + dzpre @ uzv,
                "wz": _grad_matmul(dzpre, xv), "uz": _grad_matmul(dzpre, hv),
                "bz": _grad_bias(dzpre),
                "wr": _grad_matmul(drpre, xv), "ur": _grad_matmul(drpre, hv),
                "br": _grad_bias(drpre),
                "wc": _grad_matmul(dcpre, xv), "uc": _grad_matmul(dcpre, rh),
                "bc": _grad_bias(dcpre),
            }
            cache["g"] = g
        return cache["grads"]

    names = ("x", "h", "wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc")

    def make_vjp(key):
        return lambda g: grads_for(g)[key]

    return _build(out, [(v, make_vjp(k)) for v, k in zip(inputs, names)])


def _toposort(root: Node) -> list[Node]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents precede children


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable Node."""
    if root.value.ndim != 0:
        raise ValueError("backward requires a scalar root, got shape "
                         f"{root.value.shape}")
    order = _toposort(root)
    root.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.grad is None:
            continue
        g = node.grad
        for parent, vjp in zip(node._parents, node._vjps):
            pg = vjp(g)
            parent.grad = pg if parent.grad is None else parent.grad + pg
