"""Minimal dense-tensor reverse-mode engine.

Everything is float64. Shapes are explicit: elementwise ops accept equal
shapes or a scalar (shape ``()``) on one side; there is no general
broadcasting. Column-vector bias and row/column masking have dedicated ops
instead.

Gradient accumulation is additive: a tensor used twice in a graph receives
the sum of both contributions. Nondifferentiable kinks (soft-threshold at
the threshold, relu at 0, sparsemax support boundary) take subgradient 0.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array with optional reverse-mode gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output.

        Populates ``.grad`` on every tensor with ``requires_grad`` that
        participated in this graph, accumulating additively.
        """
        if self.data.shape != ():
            raise ShapeError(f"backward requires a scalar output, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")
        topo = _toposort(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: Iterable[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(np.sum(g))
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} "
                         "must match (or one must be a scalar)")


# ---------------------------------------------------------------------------
# elementwise and scalar ops

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "add")
    return _from_op(a.data + b.data, (a, b),
                    lambda g: (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "sub")
    return _from_op(a.data - b.data, (a, b),
                    lambda g: (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise(a, b, "mul")
    return _from_op(a.data * b.data, (a, b),
                    lambda g: (_reduce_to(g * b.data, a.data.shape),
                               _reduce_to(g * a.data, b.data.shape)))


def neg(a) -> Tensor:
    a = _wrap(a)
    return _from_op(-a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0
    return _from_op(np.maximum(a.data, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),))


def max_with_scalar(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)
    mask = a.data > s
    return _from_op(np.maximum(a.data, s), (a,), lambda g: (np.where(mask, g, 0.0),))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def reciprocal(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data == 0.0):
        raise DomainError("reciprocal of zero")
    out = 1.0 / a.data
    return _from_op(out, (a,), lambda g: (-g * out * out,))


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), numerically stable; gradient is the logistic sigmoid."""
    a = _wrap(a)
    out = np.logaddexp(0.0, a.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _from_op(out, (a,), lambda g: (g * sig,))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _from_op(a.data @ b.data, (a, b),
                    lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")
    return _from_op(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    orig = a.data.shape
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def sum_all(a) -> Tensor:
    a = _wrap(a)
    shape = a.data.shape
    return _from_op(np.asarray(np.sum(a.data)), (a,),
                    lambda g: (np.full(shape, float(g)),))


def mean_cols(a) -> Tensor:
    """Mean over columns of a matrix; returns a column vector (r, 1)."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"mean_cols expects a matrix, got shape {a.data.shape}")
    c = a.data.shape[1]
    return _from_op(a.data.mean(axis=1, keepdims=True), (a,),
                    lambda g: (np.repeat(g / c, c, axis=1),))


def add_colvec(m, v) -> Tensor:
    """Matrix plus a column vector added to every column (bias add)."""
    m, v = _wrap(m), _wrap(v)
    if m.data.ndim != 2 or v.data.shape != (m.data.shape[0], 1):
        raise ShapeError(f"add_colvec: matrix {m.data.shape} with column {v.data.shape}")
    return _from_op(m.data + v.data, (m, v),
                    lambda g: (g, g.sum(axis=1, keepdims=True)))


def scale_columns(m, s: np.ndarray) -> Tensor:
    """Scale column j of a matrix by the constant s[j] (masking; s carries no grad)."""
    m = _wrap(m)
    s = np.asarray(s, dtype=np.float64)
    if m.data.ndim != 2 or s.shape != (m.data.shape[1],):
        raise ShapeError(f"scale_columns: matrix {m.data.shape} with scales {s.shape}")
    row = s[None, :]
    return _from_op(m.data * row, (m,), lambda g: (g * row,))


def scale_rows(m, s: np.ndarray) -> Tensor:
    """Scale row i of a matrix by the constant s[i] (masking; s carries no grad)."""
    m = _wrap(m)
    s = np.asarray(s, dtype=np.float64)
    if m.data.ndim != 2 or s.shape != (m.data.shape[0],):
        raise ShapeError(f"scale_rows: matrix {m.data.shape} with scales {s.shape}")
    col = s[:, None]
    return _from_op(m.data * col, (m,), lambda g: (g * col,))


def gather_rows(a, idx) -> Tensor:
    """Select rows of a column vector (or entries of a 1-D tensor) by index."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"gather_rows expects a vector, got shape {a.data.shape}")
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _from_op(a.data[idx], (a,), backward)


def gather_cols(a, idx) -> Tensor:
    """Select matrix columns by index."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_cols expects a matrix, got shape {a.data.shape}")
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full.T, idx, g.T)
        return (full,)

    return _from_op(a.data[:, idx], (a,), backward)


def scatter_cols(a, idx, n_cols: int) -> Tensor:
    """Place matrix columns at the given indices of a wider zero matrix."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or len(idx) != a.data.shape[1]:
        raise ShapeError(f"scatter_cols: matrix {a.data.shape} with {len(idx)} indices")
    out = np.zeros((a.data.shape[0], n_cols))
    out[:, idx] = a.data
    return _from_op(out, (a,), lambda g: (g[:, idx],))


# ---------------------------------------------------------------------------
# sparse-coding primitives

def soft_threshold(x, lam) -> Tensor:
    """Elementwise shrinkage sign(x)*max(|x|-lam, 0).

    lam may be a float or a scalar tensor (then the threshold is learnable:
    d/dlam = -sign(output) summed over the active set).
    """
    x = _wrap(x)
    lam_t = lam if isinstance(lam, Tensor) else None
    lam_v = float(lam_t.data) if lam_t is not None else float(lam)
    if lam_t is not None and lam_t.data.shape != ():
        raise ShapeError(f"soft_threshold threshold must be a scalar, got {lam_t.data.shape}")
    if lam_v < 0.0:
        raise DomainError(f"soft_threshold threshold must be nonnegative, got {lam_v}")
    out = kernels.soft_threshold(x.data, lam_v)

    if lam_t is None:
        def backward(g):
            gx, _ = kernels.soft_threshold_backward(g, out)
            return (gx,)
        return _from_op(out, (x,), backward)

    def backward(g):
        gx, glam = kernels.soft_threshold_backward(g, out)
        return gx, np.asarray(glam)

    return _from_op(out, (x, lam_t), backward)


def sparsemax(a) -> Tensor:
    """Euclidean projection of logits onto the probability simplex.

    Accepts a 1-D tensor or a single-column matrix; zero entries of the
    output are exact zeros.
    """
    a = _wrap(a)
    if a.data.ndim == 2 and a.data.shape[1] != 1:
        raise ShapeError(f"sparsemax expects a vector, got shape {a.data.shape}")
    if not np.all(np.isfinite(a.data)):
        raise DomainError("sparsemax input must be finite")
    flat = np.ascontiguousarray(a.data.ravel())
    p = kernels.sparsemax(flat)
    out = p.reshape(a.data.shape)

    def backward(g):
        gz = kernels.sparsemax_backward(np.ascontiguousarray(g.ravel()), p)
        return (gz.reshape(a.data.shape),)

    return _from_op(out, (a,), backward)


def softmax_cols(a) -> Tensor:
    """Column-wise softmax of a matrix (strictly positive outputs)."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_cols expects a matrix, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        return (p * (g - np.sum(p * g, axis=0, keepdims=True)),)

    return _from_op(p, (a,), backward)
