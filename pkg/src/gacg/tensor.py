"""Reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` wraps a numpy float64 array and records lineage when built from
other tensors, so a scalar loss can be backpropagated through the whole
computation with `backward`.  Everything is float64: the networks here are
tiny and exact-ish arithmetic keeps finite-difference gradient checks tight
and runs bit-reproducible.

Design notes:
  - gradients accumulate additively across fan-out;
  - `no_grad()` suppresses lineage recording (used for rollouts and target
    network evaluation);
  - broadcasting is supported exactly where the implemented operations need
    it (bias adds, batched scaling); gradients are summed back over
    broadcast axes.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables lineage recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array node in a reverse-mode autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """A view of the same values, cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data, parents, backward):
        requires = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=requires)
        if requires:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape

        def backward():
            self._accumulate(node.grad.reshape(src))

        node = Tensor._node(self.data.reshape(shape), (self,), backward)
        return node

    def transpose_last2(self) -> "Tensor":
        def backward():
            self._accumulate(np.swapaxes(node.grad, -1, -2))

        node = Tensor._node(np.swapaxes(self.data, -1, -2), (self,), backward)
        return node

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        def backward():
            g = node.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        node = Tensor._node(self.data.sum(axis=axis, keepdims=keepdims),
                            (self,), backward)
        return node

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return scale(self.sum(axis=axis, keepdims=keepdims), 1.0 / float(n))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _shapes(op, a, b=None):
    if b is None:
        return f"{op}: shape {a.shape}"
    return f"{op}: shapes {a.shape} and {b.shape}"


# -- binary elementwise -----------------------------------------------------

def _binary(op_name, a, b, fwd, da, db):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{_shapes(op_name, a, b)}: {exc}") from None

    def backward():
        g = node.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g, a.data, b.data), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g, a.data, b.data), b.data.shape))

    node = Tensor._node(data, (a, b), backward)
    return node


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, np.divide,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def matmul(a, b) -> Tensor:
    """Matrix product; stacked (batched) operands follow numpy semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"{_shapes('matmul', a, b)}: operands must be >= 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"{_shapes('matmul', a, b)}: inner dimensions differ")
    if a.ndim > 2 and b.ndim == 2:
        # (..., i, j) @ (j, k) is one flat GEMM; much faster than the
        # stacked-matmul path and its per-slice dW reduction
        lead = a.shape[:-1]
        a2 = np.ascontiguousarray(a.data).reshape(-1, a.shape[-1])
        data = np.matmul(a2, b.data).reshape(lead + (b.shape[-1],))

        def backward():
            g2 = np.ascontiguousarray(node.grad).reshape(-1, b.shape[-1])
            if a.requires_grad:
                a._accumulate(np.matmul(g2, b.data.T).reshape(a.data.shape))
            if b.requires_grad:
                b._accumulate(np.matmul(a2.T, g2))

        node = Tensor._node(data, (a, b), backward)
        return node
    data = np.matmul(a.data, b.data)

    def backward():
        g = node.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    node = Tensor._node(data, (a, b), backward)
    return node


# -- unary ------------------------------------------------------------------

def _unary(a, fwd_data, dfn):
    a = _as_tensor(a)
    data = fwd_data

    def backward():
        a._accumulate(dfn(node.grad))

    node = Tensor._node(data, (a,), backward)
    return node


def relu(a) -> Tensor:
    a = _as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0),
                  lambda g: g * (a.data > 0.0))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, y, lambda g: g * y * (1.0 - y))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _unary(a, a.data * c, lambda g: g * c)


def clamp01(a) -> Tensor:
    """Clamp to [0, 1]; subgradient is 0 strictly outside the interval."""
    a = _as_tensor(a)
    mask = (a.data >= 0.0) & (a.data <= 1.0)
    return _unary(a, np.clip(a.data, 0.0, 1.0), lambda g: g * mask)


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); subgradient 0 where the floor is active."""
    a = _as_tensor(a)
    mask = a.data >= lo
    return _unary(a, np.maximum(a.data, lo), lambda g: g * mask)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    return _unary(a, np.abs(a.data), lambda g: g * np.sign(a.data))


def pow_const(a, p: float) -> Tensor:
    """a ** p for constant p; gradient masked to 0 at a == 0 when p < 1."""
    a = _as_tensor(a)
    data = np.power(a.data, p)

    def dfn(g):
        if p < 1.0:
            safe = np.where(a.data == 0.0, 1.0, a.data)
            d = p * np.power(safe, p - 1.0)
            d = np.where(a.data == 0.0, 0.0, d)
        else:
            d = p * np.power(a.data, p - 1.0)
        return g * d

    return _unary(a, data, dfn)


def sqrt(a) -> Tensor:
    return pow_const(a, 0.5)


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis, computed with the usual max-shift."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def dfn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - dot)

    return _unary(a, y, dfn)


def l2_norm(a) -> Tensor:
    """Euclidean norm of the whole tensor (scalar); subgradient 0 at zero."""
    a = _as_tensor(a)
    norm = float(np.sqrt(np.sum(a.data * a.data)))

    def dfn(g):
        if norm == 0.0:
            return np.zeros_like(a.data)
        return g * a.data / norm

    return _unary(a, np.float64(norm), dfn)


def concat(parts, axis: int = -1) -> Tensor:
    """Concatenate tensors along `axis`."""
    parts = [_as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"concat: shapes {shapes}: {exc}") from None
    sizes = [p.data.shape[axis] for p in parts]

    def backward():
        g = node.grad
        offsets = np.cumsum([0] + sizes)
        for p, o, s in zip(parts, offsets, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(o, o + s)
                p._accumulate(g[tuple(idx)])

    node = Tensor._node(data, tuple(parts), backward)
    return node


def gather_last(a, index: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per leading position.

    `index` has shape a.shape[:-1]; the result drops the last axis.
    """
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.shape != a.shape[:-1]:
        raise ShapeError(
            f"gather_last: index shape {index.shape} vs data shape {a.shape}")
    lead = int(np.prod(a.shape[:-1], dtype=np.int64)) if a.ndim > 1 else 1
    flat = a.data.reshape(lead, a.shape[-1])
    rows = np.arange(lead)
    data = flat[rows, index.reshape(lead)].reshape(a.shape[:-1])

    def backward():
        g = node.grad.reshape(lead)
        gx = np.zeros_like(flat)
        gx[rows, index.reshape(lead)] = g
        a._accumulate(gx.reshape(a.shape))

    node = Tensor._node(data, (a,), backward)
    return node


# -- operator dispatch ------------------------------------------------------

_ARITH_KINDS = {
    "add": lambda a, b: add(a, b),
    "sub": lambda a, b: sub(a, b),
    "mul": lambda a, b: mul(a, b),
    "matmul": lambda a, b: matmul(a, b),
    "relu": lambda a, b: relu(a),
    "sigmoid": lambda a, b: sigmoid(a),
    "softmax_rows": lambda a, b: softmax_rows(a),
    "l2_norm": lambda a, b: l2_norm(a),
    "concat": lambda a, b: concat([a, b], axis=-1),
    "scale": lambda a, b: scale(a, b),
    "clamp01": lambda a, b: clamp01(a),
}


def tensor_arith(a, b=None, kind: str = "add") -> Tensor:
    """Uniform dispatch over the core arithmetic kinds.

    Unary kinds ignore `b`; `scale` takes a python float for `b`.
    """
    if kind not in _ARITH_KINDS:
        raise ValueError(f"unknown arithmetic kind '{kind}'")
    return _ARITH_KINDS[kind](a, b)


# -- backward pass ----------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate gradients of everything `loss` depends on.

    `loss` must be scalar (shape () or (1,)).  Gradients accumulate
    additively; call `ParameterSet.zero_grad` between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative topological sort (graphs can be deep for long batches).
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
