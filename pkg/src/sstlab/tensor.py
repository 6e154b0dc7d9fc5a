"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a tensor that requires grad records its parents and a
closure mapping the output adjoint to parent adjoints.  ``backward`` walks the
recorded graph once in reverse topological order.  Broadcasting is limited to
scalar<->tensor and same-shape operands; row-wise bias addition has its own op.
"""
from __future__ import annotations

import numbers
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


def _as_array(value) -> np.ndarray:
    # float64 arrays are shared, not copied; ops never write into .data
    return np.asarray(value, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tmean(self, axis)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(value, like: Tensor | None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, numbers.Real):
        return Tensor(float(value))
    return Tensor(value)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_binary(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # only scalar broadcasting exists
    return np.asarray(grad.sum()).reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _lift(a, None), _lift(b, None)
    _check_binary(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a, None), _lift(b, None)
    _check_binary(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a, None), _lift(b, None)
    _check_binary(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # subgradient 0 at exactly 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    """sqrt(a + eps); ``eps`` keeps the adjoint finite at zero."""
    out = np.sqrt(a.data + eps)
    return _make(out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-300),))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def cos(a: Tensor) -> Tensor:
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def arccos(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Inverse cosine with the input clipped to [-1, 1].

    The adjoint -1/sqrt(1 - x^2) is guarded by ``eps`` so it stays finite at
    the poles.
    """
    x = np.clip(a.data, -1.0, 1.0)
    denom = np.sqrt(np.maximum(1.0 - x * x, eps))
    return _make(np.arccos(x), (a,), lambda g: (-g / denom,))


def minimum(a: Tensor, bound: float) -> Tensor:
    """Elementwise min against a constant; adjoint passes where a < bound."""
    mask = a.data < bound
    return _make(np.where(mask, a.data, bound), (a,), lambda g: (g * mask,))


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = _lift(a, None), _lift(b, None)
    if not (a.shape == b.shape == cond.shape):
        raise DimensionError(f"where: shapes {cond.shape}, {a.shape}, {b.shape} differ")
    return _make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)),
    )


# ----------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-N vector to every row of a B x N matrix."""
    if x.ndim != 2 or bias.shape != (x.shape[1],):
        raise DimensionError(f"bias_add: incompatible shapes {x.shape} and {bias.shape}")
    return _make(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(out), (a,), back)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / count)


def take(a: Tensor, index) -> Tensor:
    """Numpy-style indexing; the adjoint scatters with accumulation."""
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), back)


def scatter(values: Tensor, index, shape: Sequence[int]) -> Tensor:
    """Place ``values`` into a zero tensor of ``shape`` at ``index``.

    Positions must be unique.
    """
    out = np.zeros(shape)
    out[index] = values.data
    return _make(out, (values,), lambda g: (g[index],))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t, None) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


# ------------------------------------------------------------------ reductions

def l2_normalize(v: Tensor, eps: float = 1e-12, axis: int = -1) -> Tensor:
    """v / max(||v||, eps) along ``axis``."""
    if v.shape[axis] < 1:
        raise DimensionError("l2_normalize: empty axis")
    norm = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    clamped = norm < eps
    denom = np.where(clamped, eps, norm)
    out = v.data / denom

    def back(g):
        # below eps the map is linear: v / eps
        radial = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(clamped, g / denom, (g - out * radial) / denom),)

    return _make(out, (v,), back)


def norm(v: Tensor, eps: float = 0.0) -> Tensor:
    """Euclidean norm over all entries; ``eps`` guards the adjoint at zero."""
    return sqrt(tsum(square(v)), eps=eps)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"cosine: incompatible shapes {a.shape} and {b.shape}")
    return tsum(mul(l2_normalize(a), l2_normalize(b)))


def log_softmax(logits: Tensor, mask=None) -> Tensor:
    """Row-wise log-softmax of a B x C matrix.

    ``mask`` (boolean, B x C) marks entries excluded from the normalizer; their
    output is -inf and they receive no gradient.
    """
    if logits.ndim != 2:
        raise DimensionError(f"log_softmax expects a matrix, got {logits.shape}")
    x = logits.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        x = np.where(mask, -np.inf, x)
    shift = x.max(axis=1, keepdims=True)
    z = np.exp(x - shift)
    lse = np.log(z.sum(axis=1, keepdims=True)) + shift
    out = x - lse
    prob = np.exp(out)

    def back(g):
        gg = np.where(np.isfinite(out), g, 0.0)
        return (gg - prob * gg.sum(axis=1, keepdims=True),)

    return _make(out, (logits,), back)


# -------------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every grad-enabled ancestor.

    Repeated calls accumulate; reset with ``zero_grad``.  Intermediate nodes
    get their adjoints too, but only leaves are meant to be read.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any grad-enabled tensor")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adjoint[key] = adjoint[key] + pg if key in adjoint else pg


def no_grad_copy(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=False)


# ------------------------------------------------------------------------ SGD

class SGD:
    """Momentum SGD: buf <- mu*buf + g + wd*p ; p <- p - lr*buf."""

    def __init__(self, params: Sequence[Tensor], names: Sequence[str] | None = None,
                 momentum: float = 0.9, weight_decay: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param{i}" for i in range(len(self.params))]
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        grads = [p.grad for p in self.params]
        sgd_step(self.params, grads, self.buffers, lr, self.momentum, self.weight_decay, self.names)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], buffers: list[np.ndarray],
             lr: float, momentum: float = 0.0, weight_decay: float = 0.0,
             names: Sequence[str] | None = None) -> None:
    """One in-place momentum SGD update; a missing grad counts as zero."""
    if len(params) != len(grads) or len(params) != len(buffers):
        raise ContractError("params, grads and buffers must align")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"param{i}"
            raise FloatingPointError(f"non-finite gradient in parameter {label!r}")
        buffers[i] = momentum * buffers[i] + g + weight_decay * p.data
        p.data = p.data - lr * buffers[i]
