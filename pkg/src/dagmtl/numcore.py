"""Small reverse-mode autodiff over numpy arrays, plus Adam.

Every forward op returns a new :class:`Variable` that remembers its parents
and a closure that pushes the output gradient back to them. ``backward``
walks that dynamic tape in reverse topological order. The graph is rebuilt
on each forward call, so per-task sub-networks can change freely between
iterations.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class Variable:
    """A value in the computation graph.

    Leaves created by the user (weights, gate logits, inputs) have no
    parents. ``trainable`` marks leaves that an optimizer may update; it
    does not affect gradient flow.
    """

    __slots__ = ("value", "grad", "trainable", "tag", "_parents", "_backward")

    def __init__(self, value, trainable: bool = False, tag: str = "",
                 _parents: tuple = (), _backward: Callable | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        if self.value.ndim == 0:
            self.value = self.value.reshape(1)
        # interior nodes allocate their gradient during backward
        self.grad = None if _backward is not None else np.zeros_like(self.value)
        self.trainable = trainable
        self.tag = tag
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Variable(tag={self.tag!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Variable):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__


def _check_finite(name: str, out: np.ndarray) -> None:
    # a NaN or Inf anywhere makes the sum non-finite
    if not math.isfinite(out.sum()):
        raise FloatingPointError(f"{name}: non-finite output")


def _node(name: str, out: np.ndarray, parents: tuple, backward: Callable) -> Variable:
    _check_finite(name, out)
    return Variable(out, tag=name, _parents=parents, _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- forward ops

def affine(x: Variable, w: Variable, b: Variable) -> Variable:
    """``x @ w + b`` for a batch ``x`` of shape (batch, fan_in)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.shape != (w.shape[1],):
        raise ValueError(f"affine: incompatible shapes x={x.shape} w={w.shape} b={b.shape}")
    out = x.value @ w.value + b.value

    def backward(g):
        x.grad += g @ w.value.T
        w.grad += x.value.T @ g
        b.grad += g.sum(axis=0)

    return _node("affine", out, (x, w, b), backward)


def relu(x: Variable) -> Variable:
    mask = x.value > 0
    out = np.where(mask, x.value, 0.0)

    def backward(g):
        x.grad += g * mask

    return _node("relu", out, (x,), backward)


def stable_sigmoid(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ez = np.exp(a[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Variable) -> Variable:
    s = stable_sigmoid(x.value)

    def backward(g):
        x.grad += g * s * (1.0 - s)

    return _node("sigmoid", s, (x,), backward)


def scalar_mul(x: Variable, c: float) -> Variable:
    c = float(c)

    def backward(g):
        x.grad += c * g

    return _node("scalar_mul", c * x.value, (x,), backward)


def add(a: Variable, b: Variable) -> Variable:
    try:
        out = a.value + b.value
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return _node("add", out, (a, b), backward)


def add_scalar(x: Variable, c: float) -> Variable:
    def backward(g):
        x.grad += g

    return _node("add_scalar", x.value + float(c), (x,), backward)


def add_n(xs: Sequence[Variable]) -> Variable:
    """Sum of equally shaped variables in one node."""
    if not xs:
        raise ValueError("add_n: empty input")
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise ValueError(f"add_n: incompatible shapes {shape} and {x.shape}")
    out = np.sum([x.value for x in xs], axis=0) if len(xs) > 1 else xs[0].value.copy()

    def backward(g):
        for x in xs:
            x.grad += g

    return _node("add_n", out, tuple(xs), backward)


def mul(a: Variable, b: Variable) -> Variable:
    """Elementwise product with numpy broadcasting."""
    try:
        out = a.value * b.value
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        a.grad += _unbroadcast(g * b.value, a.shape)
        b.grad += _unbroadcast(g * a.value, b.shape)

    return _node("mul", out, (a, b), backward)


def take(x: Variable, index: int) -> Variable:
    """Element ``index`` of a 1-D variable, as a shape-(1,) variable."""
    if x.value.ndim != 1 or not 0 <= index < x.shape[0]:
        raise ValueError(f"take: index {index} out of range for shape {x.shape}")

    def backward(g):
        x.grad[index] += g[0]

    return _node("take", x.value[index:index + 1].copy(), (x,), backward)


def gated_sum(xs: Sequence[Variable], gates: Variable, index: Sequence[int],
              scale: float = 1.0) -> Variable:
    """``scale * sum_k gates[index[k]] * xs[k]``.

    Fused form of the gated aggregation used by the central network; it
    keeps the tape short when a state has many incoming messages.
    """
    if len(xs) != len(index):
        raise ValueError(f"gated_sum: {len(xs)} inputs but {len(index)} gate indices")
    if not xs:
        raise ValueError("gated_sum: empty input")
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise ValueError(f"gated_sum: incompatible shapes {shape} and {x.shape}")
    idx = np.asarray(index, dtype=int)
    g_vals = gates.value[idx]
    stacked = np.stack([x.value for x in xs])
    out = scale * np.tensordot(g_vals, stacked, axes=1)

    def backward(g):
        for k, x in enumerate(xs):
            x.grad += (scale * g_vals[k]) * g
        np.add.at(gates.grad, idx, scale * np.tensordot(stacked, g, axes=g.ndim))

    return _node("gated_sum", out, tuple(xs) + (gates,), backward)


def sum_all(x: Variable) -> Variable:
    def backward(g):
        x.grad += g[0]

    return _node("sum", np.array([x.value.sum()]), (x,), backward)


def mean(x: Variable) -> Variable:
    n = x.value.size

    def backward(g):
        x.grad += g[0] / n

    return _node("mean", np.array([x.value.mean()]), (x,), backward)


def softmax_cross_entropy(logits: Variable, labels) -> Variable:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=int)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise ValueError("softmax_cross_entropy: label out of range")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    loss = np.mean(logsumexp - z[rows, labels])
    probs = np.exp(z - logsumexp[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        logits.grad += g[0] * d / len(labels)

    return _node("softmax_cross_entropy", np.array([loss]), (logits,), backward)


def l2_loss(pred: Variable, target) -> Variable:
    """Mean squared error between ``pred`` and a constant ``target``."""
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ValueError(f"l2_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.value - target
    n = diff.size

    def backward(g):
        pred.grad += g[0] * 2.0 * diff / n

    return _node("l2_loss", np.array([np.mean(diff * diff)]), (pred,), backward)


# ------------------------------------------------------------------- backward

def backward(loss: Variable) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf reachable from ``loss``.

    Intermediate nodes get their gradient reset before propagation, so
    calling this twice on the same graph accumulates into leaves only.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order: list[Variable] = []
    seen: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(loss, False)]
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
    for node in order:
        if node._backward is not None:
            node.grad = np.zeros_like(node.value)
    loss.grad = loss.grad + np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(variables: Iterable[Variable]) -> None:
    for v in variables:
        v.zero_grad()


# ------------------------------------------------------------------ optimizer

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Adam:
    """Adam with bias correction. Moments are keyed by variable identity."""

    def __init__(self, variables: Sequence[Variable], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.variables = list(variables)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(v.value) for v in self.variables]
        self.v = [np.zeros_like(v.value) for v in self.variables]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for var, m, v in zip(self.variables, self.m, self.v):
            g = var.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            var.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        zero_grad(self.variables)
