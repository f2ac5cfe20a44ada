"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records a node holding its parents and a
backward closure. Backward closures are written in terms of ``Tensor``
operations themselves, so running them with graph recording enabled
(``create_graph=True``) yields gradients that are differentiable again.
That is what makes gradient penalties trainable.

Grad mode and checked mode are thread-local; a graph must stay on the
thread that built it.
"""

from __future__ import annotations

import itertools
import threading
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError, StatisticsError

_seq = itertools.count()
_local = threading.local()


class DisconnectedGradientWarning(UserWarning):
    """A requested gradient has no path to the output; zeros were returned."""


def is_grad_enabled() -> bool:
    return getattr(_local, "grad", True)


def is_checked() -> bool:
    return getattr(_local, "checked", False)


def set_checked(flag: bool) -> None:
    """Toggle the NaN/Inf scan performed after every operation on this thread."""
    _local.checked = bool(flag)


@contextmanager
def grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _local.grad = enabled
    try:
        yield
    finally:
        _local.grad = prev


def _needs(t) -> bool:
    """Whether the running backward pass wants a gradient for ``t``."""
    if not t.requires_grad:
        return False
    live = getattr(_local, "live", None)
    return live is None or id(t) in live


def no_grad():
    return grad_mode(False)


@contextmanager
def checked_mode(enabled: bool = True):
    prev = is_checked()
    _local.checked = enabled
    try:
        yield
    finally:
        _local.checked = prev


class _Node:
    __slots__ = ("seq", "parents", "backward", "op")

    def __init__(self, parents, backward, op):
        self.seq = next(_seq)
        self.parents = parents
        self.backward = backward
        self.op = op


class Tensor:
    """An n-dimensional float64 array that can take part in a computation graph."""

    __slots__ = ("data", "requires_grad", "node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return constant(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators ----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    # -- method forms ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a1, a2):
        axes = list(range(self.ndim))
        axes[a1], axes[a2] = axes[a2], axes[a1]
        return transpose(self, tuple(axes))

    def square(self):
        return square(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def leaky_relu(self, slope: float = 0.2):
        return leaky_relu(self, slope)


def constant(data) -> Tensor:
    """Wrap an array as a graph-free tensor without copying float64 input."""
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(data, dtype=np.float64)
    t.requires_grad = False
    t.node = None
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")


def _make(data, parents: tuple, backward: Callable, op: str) -> Tensor:
    if is_checked():
        _check(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.node = None
    out.requires_grad = False
    if is_grad_enabled():
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out.node = _Node(parents, backward, op)
                break
    return out


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _sum_to(g: Tensor, shape: tuple) -> Tensor:
    """Undo broadcasting by summing ``g`` down to ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and g.shape[i + lead] != 1
    )
    if axes:
        g = sum(g, axis=axes)
    return reshape(g, shape)


# -- binary elementwise ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g, out):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g, out):
        return _sum_to(g, a.shape), _sum_to(neg(g), b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g, out):
        ga = _sum_to(mul(g, b), a.shape) if _needs(a) else None
        gb = _sum_to(mul(g, a), b.shape) if _needs(b) else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    if is_checked() and np.any(b.data == 0):
        raise DomainError("div: division by zero")

    def bw(g, out):
        ga = _sum_to(div(g, b), a.shape) if _needs(a) else None
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if _needs(b) else None
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _make(data, (a, b), bw, "div")


# -- unary elementwise -------------------------------------------------------

def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g, out: (neg(g),), "neg")


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    if is_checked() and not p.is_integer() and np.any(a.data < 0):
        raise DomainError("power: negative base with fractional exponent")

    def bw(g, out):
        return (mul(g, mul(power(a, p - 1.0), p)),)

    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.power(a.data, p)
    return _make(data, (a,), bw, "power")


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g, out: (mul(g, mul(a, 2.0)),), "square")


def sin(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g, out: (mul(g, cos(a)),), "sin")


def cos(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g, out: (neg(mul(g, sin(a))),), "cos")


def tanh(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g, out):
        return (mul(g, sub(1.0, mul(out, out))),)

    return _make(np.tanh(a.data), (a,), bw, "tanh")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make(data, (a,), lambda g, out: (mul(g, out),), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if is_checked() and np.any(a.data <= 0):
        raise DomainError("log: non-positive argument")
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, (a,), lambda g, out: (div(g, a),), "log")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g, out):
        return (mul(g, mul(out, sub(1.0, out))),)

    return _make(_sigmoid_np(a.data), (a,), bw, "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = _as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g, out: (mul(g, sigmoid(a)),), "softplus")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    slope_mask = constant(factor)
    return _make(a.data * factor, (a,), lambda g, out: (mul(g, slope_mask),), "leaky_relu")


_UNARY = {
    "square": square,
    "sin": sin,
    "cos": cos,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None, *, slope: float = 0.2) -> Tensor:
    """Dispatch an elementwise operation by name.

    ``op_kind`` is one of add, sub, mul, div (binary) or square, sin, cos,
    tanh, exp, log, sigmoid, softplus, neg, leaky_relu (unary).
    """
    if op_kind in _BINARY:
        if b is None:
            raise DimensionError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if b is not None:
        raise DimensionError(f"{op_kind} takes one operand")
    if op_kind == "leaky_relu":
        return leaky_relu(a, slope)
    try:
        return _UNARY[op_kind](a)
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None


# -- linear algebra ------------------------------------------------------------

def _check_matmul(a: Tensor, b: Tensor) -> None:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None


def _matmul_bw(a: Tensor, b: Tensor):
    def bw(g, out):
        ga = _sum_to(matmul(g, b.swapaxes(-1, -2)), a.shape) if _needs(a) else None
        gb = _sum_to(matmul(a.swapaxes(-1, -2), g), b.shape) if _needs(b) else None
        return ga, gb

    return bw


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_matmul(a, b)
    return _make(np.matmul(a.data, b.data), (a, b), _matmul_bw(a, b), "matmul")


def rowwise_matmul(a, b) -> Tensor:
    """Matrix product whose rows are bitwise independent of the other rows.

    BLAS picks kernels by problem size, so ``(X @ W)[i]`` can differ in the
    last bit depending on how many rows ``X`` has. Pointwise function
    evaluation must not, hence einsum here. The guarantee covers graph-free
    evaluation; when a graph is being recorded the BLAS path is used, since
    training never compares rows across batch sizes.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _check_matmul(a, b)
    if is_grad_enabled() and (a.requires_grad or b.requires_grad):
        return _make(np.matmul(a.data, b.data), (a, b), _matmul_bw(a, b), "matmul")
    data = np.einsum("...nk,...km->...nm", a.data, b.data)
    return _make(data, (a, b), _matmul_bw(a, b), "rowwise_matmul")


# -- reductions and shape ops ----------------------------------------------------

def _norm_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g, out):
        return (broadcast_to(reshape(g, kept), a.shape),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum(a, axes, keepdims), 1.0 / count)


def reduce(op_kind: str, a, axes=None, keepdims: bool = False) -> Tensor:
    if op_kind == "sum":
        return sum(a, axes, keepdims)
    if op_kind == "mean":
        return mean(a, axes, keepdims)
    raise ValueError(f"unknown reduction {op_kind!r}")


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from None
    return _make(data, (a,), lambda g, out: (_sum_to(g, a.shape),), "broadcast_to")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from None
    return _make(data, (a,), lambda g, out: (reshape(g, a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g, out: (transpose(g, inv),), "transpose")


def _is_basic_key(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in items)


def index(a, key) -> Tensor:
    """``a[key]`` for basic slicing and integer-array gathers."""
    a = _as_tensor(a)
    try:
        data = a.data[key]
    except IndexError as e:
        raise DimensionError(str(e)) from None
    if not _is_basic_key(key):
        data = np.ascontiguousarray(data)
    return _make(data, (a,), lambda g, out: (index_add(g, key, a.shape),), "index")


def index_add(g, key, shape) -> Tensor:
    """Scatter ``g`` into zeros of ``shape`` at ``key``, accumulating repeats."""
    g = _as_tensor(g)
    data = np.zeros(shape)
    if _is_basic_key(key):
        data[key] += g.data
    else:
        np.add.at(data, key, g.data)
    return _make(data, (g,), lambda gg, out: (index(gg, key),), "index_add")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g, out):
        grads = []
        for i, t in enumerate(ts):
            key = (slice(None),) * ax + (slice(int(bounds[i]), int(bounds[i + 1])),)
            grads.append(index(g, key) if _needs(t) else None)
        return tuple(grads)

    return _make(data, tuple(ts), bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts]
    return concat(expanded, axis=axis)


# -- differentiation -------------------------------------------------------------

def backward(output: Tensor, wrt: Iterable[Tensor], create_graph: bool = False) -> list:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    With ``create_graph`` the backward pass records its own operations, so the
    returned gradients can be differentiated again. Tensors with no path to
    ``output`` get zero gradients (and a warning in checked mode).
    """
    if output.size != 1:
        raise DimensionError(f"backward needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)

    order = []
    seen = set()
    todo = [output]
    while todo:
        t = todo.pop()
        if t.node is None or id(t) in seen:
            continue
        seen.add(id(t))
        order.append(t)
        todo.extend(p for p in t.node.parents if p.requires_grad)
    order.sort(key=lambda t: t.node.seq, reverse=True)

    wanted = {id(t) for t in wrt}
    # only tensors with a path down to a requested tensor need gradients
    live = set(wanted)
    for t in reversed(order):
        if any(id(p) in live for p in t.node.parents):
            live.add(id(t))
    grads = {id(output): constant(np.ones_like(output.data))}
    found = {}
    prev_live = getattr(_local, "live", None)
    _local.live = live
    try:
        with grad_mode(create_graph):
            for t in order:
                g = grads.pop(id(t), None)
                if g is None:
                    continue
                if id(t) in wanted:
                    found[id(t)] = g
                if id(t) not in live:
                    continue
                parent_grads = t.node.backward(g, t)
                for p, pg in zip(t.node.parents, parent_grads):
                    if pg is None or id(p) not in live:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
    finally:
        _local.live = prev_live

    result = []
    for t in wrt:
        g = found.get(id(t))
        if g is None:
            g = grads.get(id(t))
        if g is None:
            if is_checked():
                warnings.warn("gradient requested for a tensor not connected to the output",
                              DisconnectedGradientWarning, stacklevel=2)
            g = constant(np.zeros_like(t.data))
        result.append(g)
    return result


# -- batch normalization ---------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (mutated in training mode)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, features: int, momentum: float = 0.9, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(features), np.ones(features), momentum, eps)


def batch_norm(x, state: BatchNormState, training: bool,
               scale: Optional[Tensor] = None, shift: Optional[Tensor] = None) -> Tensor:
    """Normalize each column of a (batch, features) tensor.

    Training mode uses batch statistics (biased variance) and folds them into
    the running averages; inference mode uses the running averages.
    """
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"batch_norm expects (batch, features), got {x.shape}")
    n = x.shape[0]
    if training:
        if n < 2:
            raise StatisticsError("batch_norm in training mode needs at least 2 rows")
        mu = mean(x, axis=0, keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=0, keepdims=True)
        out = mul(centered, power(add(var, state.eps), -0.5))
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mu.data[0]
        state.running_var = m * state.running_var + (1 - m) * var.data[0] * (n / (n - 1))
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        out = mul(sub(x, state.running_mean), inv)
    if scale is not None:
        out = mul(out, scale)
    if shift is not None:
        out = add(out, shift)
    return out
