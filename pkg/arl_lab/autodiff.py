"""
Reverse-mode automatic differentiation over dense float64 arrays.

A Tape is a Wengert list: every recorded operation appends one Node whose
parents were recorded before it, so a single reverse sweep over the list
visits nodes in a valid order for backpropagation.
"""

import math
from collections import namedtuple

import numpy as np

from .errors import NumericError, ShapeError


class Node:
    """One recorded value on a tape."""

    __slots__ = ("kind", "value", "grad", "parents", "payload", "key", "requires_grad")

    def __init__(self, kind, value, parents=(), payload=None, key=None, requires_grad=False):
        self.kind = kind
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = tuple(parents)
        self.payload = payload
        self.key = key
        self.requires_grad = requires_grad


class Var:
    """Reference to a node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def node(self):
        return self.tape.nodes[self.index]

    @property
    def value(self):
        return self.node.value

    @property
    def grad(self):
        return self.node.grad

    @property
    def shape(self):
        return self.node.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        if isinstance(other, Var):
            return add(self, scale(other, -1.0))
        return add(self, -np.asarray(other, dtype=np.float64))

    def __mul__(self, other):
        if isinstance(other, Var):
            return multiply(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(kind={self.node.kind!r}, shape={self.shape})"


class Tape:
    """Append-only record of a differentiable computation."""

    def __init__(self):
        self.nodes = []
        self._keys = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, key=None):
        """Register a differentiable input. A key already watched returns its existing leaf."""
        if key is not None and key in self._keys:
            return Var(self, self._keys[key])
        node = Node("leaf", _as_array(value), key=key, requires_grad=True)
        index = self._append(node)
        if key is not None:
            self._keys[key] = index
        return Var(self, index)

    def constant(self, value):
        """Register an input that never receives a gradient."""
        return Var(self, self._append(Node("constant", _as_array(value))))

    def record(self, kind, inputs, payload=None):
        """Evaluate primitive `kind` on `inputs` and append the result."""
        if kind not in PRIMITIVES:
            raise ValueError(f"Unknown primitive '{kind}'")
        primitive = PRIMITIVES[kind]
        if len(inputs) != primitive.arity:
            raise ValueError(f"{kind} takes {primitive.arity} input(s), got {len(inputs)}")
        for var in inputs:
            if var.tape is not self:
                raise ValueError(f"{kind}: input belongs to a different tape")

        values = [var.value for var in inputs]
        if primitive.check is not None:
            primitive.check(kind, payload, *values)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = _as_array(primitive.forward(payload, *values))
        requires_grad = any(var.node.requires_grad for var in inputs)
        node = Node(kind, out, [var.index for var in inputs], payload, requires_grad=requires_grad)
        return Var(self, self._append(node))

    def zero_grad(self):
        """Reset every accumulated gradient to zero."""
        for node in self.nodes:
            node.grad = np.zeros_like(node.value)

    def gradients(self):
        """Accumulated gradients of the keyed leaves."""
        return {key: self.nodes[index].grad.copy() for key, index in self._keys.items()}

    def _append(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1


def _as_array(value):
    return np.array(value, dtype=np.float64)


def _lift(tape, value):
    return value if isinstance(value, Var) else tape.constant(value)


# --- shape checks -----------------------------------------------------------

def _check_matmul(kind, payload, a, b):
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"{kind}: cannot multiply shapes {a.shape} and {b.shape}")


def _check_add(kind, payload, a, b):
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.shape == a.shape[1:]:
        return
    raise ShapeError(f"{kind}: cannot broadcast shape {b.shape} onto {a.shape}")


def _check_same(kind, payload, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _check_rows(kind, payload, a):
    if a.ndim != 2:
        raise ShapeError(f"{kind}: expected a [batch x classes] matrix, got shape {a.shape}")


def _check_axis(kind, payload, a):
    if payload is not None and not -a.ndim <= payload < a.ndim:
        raise ShapeError(f"{kind}: axis {payload} out of range for shape {a.shape}")


# --- forward rules ----------------------------------------------------------

def _sigmoid(a):
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _log_softmax(a):
    shifted = a - a.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _reduce_count(a, axis):
    return a.size if axis is None else a.shape[axis]


# --- backward rules: (upstream, out, payload, *inputs) -> input grads --------

def _matmul_grad(g, out, payload, a, b):
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _add_grad(g, out, payload, a, b):
    return g, (g if a.shape == b.shape else g.sum(axis=0))


def _reduce_grad(g, a, axis):
    if axis is None:
        return np.full_like(a, g)
    return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()


Primitive = namedtuple("Primitive", ["arity", "check", "forward", "backward"])

PRIMITIVES = {
    "matmul": Primitive(2, _check_matmul,
                        lambda p, a, b: a @ b,
                        _matmul_grad),
    "add": Primitive(2, _check_add,
                     lambda p, a, b: a + b,
                     _add_grad),
    "multiply": Primitive(2, _check_same,
                          lambda p, a, b: a * b,
                          lambda g, out, p, a, b: (g * b, g * a)),
    "relu": Primitive(1, None,
                      lambda p, a: np.maximum(a, 0.0),
                      lambda g, out, p, a: (g * (a > 0),)),
    "sigmoid": Primitive(1, None,
                         lambda p, a: _sigmoid(a),
                         lambda g, out, p, a: (g * out * (1.0 - out),)),
    "tanh": Primitive(1, None,
                      lambda p, a: np.tanh(a),
                      lambda g, out, p, a: (g * (1.0 - out * out),)),
    "log_softmax": Primitive(1, _check_rows,
                             lambda p, a: _log_softmax(a),
                             lambda g, out, p, a: (g - np.exp(out) * g.sum(axis=1, keepdims=True),)),
    "log": Primitive(1, None,
                     lambda p, a: np.log(a),
                     lambda g, out, p, a: (g / a,)),
    "exp": Primitive(1, None,
                     lambda p, a: np.exp(a),
                     lambda g, out, p, a: (g * out,)),
    "sum": Primitive(1, _check_axis,
                     lambda p, a: a.sum(axis=p),
                     lambda g, out, p, a: (_reduce_grad(g, a, p),)),
    "mean": Primitive(1, _check_axis,
                      lambda p, a: a.mean(axis=p),
                      lambda g, out, p, a: (_reduce_grad(g, a, p) / _reduce_count(a, p),)),
    "scale": Primitive(1, None,
                       lambda p, a: p * a,
                       lambda g, out, p, a: (p * g,)),
}


# --- public op helpers ------------------------------------------------------

def matmul(a, b):
    return a.tape.record("matmul", (a, _lift(a.tape, b)))


def add(a, b):
    if not isinstance(a, Var):
        a, b = b, a
    return a.tape.record("add", (a, _lift(a.tape, b)))


def multiply(a, b):
    return a.tape.record("multiply", (a, _lift(a.tape, b)))


def relu(a):
    return a.tape.record("relu", (a,))


def sigmoid(a):
    return a.tape.record("sigmoid", (a,))


def tanh(a):
    return a.tape.record("tanh", (a,))


def log_softmax(a):
    return a.tape.record("log_softmax", (a,))


def log(a):
    return a.tape.record("log", (a,))


def exp(a):
    return a.tape.record("exp", (a,))


def reduce_sum(a, axis=None):
    return a.tape.record("sum", (a,), payload=axis)


def reduce_mean(a, axis=None):
    return a.tape.record("mean", (a,), payload=axis)


def scale(a, factor):
    return a.tape.record("scale", (a,), payload=float(factor))


def backward(tape, loss):
    """
    Backpropagate from a scalar loss and return the accumulated gradient of
    every keyed leaf. Gradients add up across calls until `tape.zero_grad()`.
    """
    if loss.tape is not tape:
        raise ValueError("loss was recorded on a different tape")
    root = tape.nodes[loss.index]
    if root.value.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {root.value.shape}")

    adjoints = [None] * (loss.index + 1)
    adjoints[loss.index] = np.ones_like(root.value)
    for index in range(loss.index, -1, -1):
        adjoint = adjoints[index]
        node = tape.nodes[index]
        if adjoint is None or not node.requires_grad:
            continue
        node.grad = node.grad + adjoint
        if not node.parents:
            continue

        parent_values = [tape.nodes[p].value for p in node.parents]
        parent_grads = PRIMITIVES[node.kind].backward(adjoint, node.value, node.payload, *parent_values)
        for parent, grad in zip(node.parents, parent_grads):
            if not tape.nodes[parent].requires_grad:
                continue
            adjoints[parent] = grad if adjoints[parent] is None else adjoints[parent] + grad

    return tape.gradients()


def finite_difference_grad(f, point, h=1e-5):
    """Central-difference gradient of a scalar function `f` at `point`."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)

    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = float(f(x.copy()))
        flat[i] = original - h
        f_minus = float(f(x.copy()))
        flat[i] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(
                f"f is not finite around coordinate {i}: f(x+h)={f_plus}, f(x-h)={f_minus}"
            )
        grad[i] = (f_plus - f_minus) / (2.0 * h)

    return grad.reshape(x.shape)


def softmax(logits):
    """Row-wise softmax of a plain array, computed through the stable log-softmax."""
    return np.exp(_log_softmax(np.atleast_2d(np.asarray(logits, dtype=np.float64))))
