"""Dense float64 tensors with taped reverse-mode differentiation.

Storage is row-major contiguous numpy float64 throughout; the engine trades
speed for exactness so finite-difference checks stay tight. Operations
executed while a :class:`Tape` is active record a backward closure on that
tape; :func:`backward` replays the tape once, in reverse, accumulating
gradients additively. With no active tape every op is plain numpy.

The one smooth nonlinearity used by every MLP in this package is tanh.

A tape and the tensors recorded on it belong to a single thread; independent
tapes may run concurrently.
"""

from __future__ import annotations

import os
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeMismatchError",
    "TapeError",
    "backward",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "concat",
    "reshape",
    "swapaxes",
    "gather",
    "where",
    "tanh",
    "sqrt",
    "exp",
    "sin",
    "cos",
    "absolute",
    "tsum",
    "tmean",
    "tmax",
    "sum_abs",
    "sum_sq",
    "softmax",
    "layer_norm",
]

_DEBUG_FINITE = os.environ.get("EHICL_DEBUG_FINITE", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested op."""


class TapeError(RuntimeError):
    """Backward invoked without a usable tape or with a non-scalar loss."""


_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = _LOCAL.tapes = []
    return stack


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered log of differentiable ops, replayed in reverse by backward().

    Topological order holds by construction: an op is appended only after its
    inputs exist, so one reverse sweep visits every op exactly once.
    """

    __slots__ = ("_ops",)

    def __init__(self) -> None:
        self._ops: list = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._ops)


class Tensor:
    """A contiguous float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if _DEBUG_FINITE and not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor holds non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _make(data: np.ndarray, requires_grad: bool) -> Tensor:
    """Wrap an op result without re-validating (internal fast path)."""
    out = Tensor.__new__(Tensor)
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("op produced non-finite values")
    out.data = data
    out.grad = None
    out.requires_grad = requires_grad
    return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, fn) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._ops.append((out, fn))
    else:
        out.requires_grad = False


def _acc(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Accumulate gradient into t; copies unless the caller owns g."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


def accumulate_grad(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Public accumulation hook for externally defined ops."""
    _acc(t, g, own=own)


def custom_op(data: np.ndarray, inputs: list, backward_fn) -> Tensor:
    """Register an op computed outside the engine.

    backward_fn(g) must route gradients into the inputs via accumulate_grad.
    The output requires grad iff any input does and a tape is active.
    """
    requires = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = _make(np.asarray(data, dtype=np.float64), requires)
    _record(out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Reverse-replay the active tape from a scalar loss.

    Every requires_grad tensor reachable from the loss ends with .grad
    populated; gradients accumulate additively across uses.
    """
    tape = active_tape()
    if tape is None:
        raise TapeError("backward requires an active tape")
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._ops):
        g = out.grad
        if g is not None:
            fn(g)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to an operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(name: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("add", a.data, b.data)
    out = _make(a.data + b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    _record(out, bw)
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("sub", a.data, b.data)
    out = _make(a.data - b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape), own=True)

    _record(out, bw)
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("mul", a.data, b.data)
    out = _make(a.data * b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.data.shape), own=True)

    _record(out, bw)
    return out


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("div", a.data, b.data)
    out = _make(a.data / b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g / b.data, a.data.shape), own=True)
        if b.requires_grad:
            _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape), own=True)

    _record(out, bw)
    return out


def neg(a) -> Tensor:
    a = _wrap(a)
    out = _make(-a.data, a.requires_grad)

    def bw(g):
        _acc(a, -g, own=True)

    _record(out, bw)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product; stacked leading axes broadcast as in numpy."""
    a, b = _wrap(a), _wrap(b)
    A, B = a.data, b.data
    try:
        data = np.matmul(A, B)
    except ValueError:
        raise ShapeMismatchError(
            f"matmul: shapes {A.shape} and {B.shape} do not conform"
        ) from None
    out = _make(data, a.requires_grad or b.requires_grad)

    def bw(g):
        if A.ndim == 1 and B.ndim == 1:
            if a.requires_grad:
                _acc(a, g * B, own=True)
            if b.requires_grad:
                _acc(b, g * A, own=True)
            return
        if A.ndim == 1:
            # (k,) @ (..., k, m) -> (..., m)
            if a.requires_grad:
                ga = np.matmul(B, g[..., :, None])[..., 0]
                _acc(a, _unbroadcast(ga, A.shape), own=True)
            if b.requires_grad:
                gb = A[:, None] * g[..., None, :]
                _acc(b, _unbroadcast(gb, B.shape), own=True)
            return
        if B.ndim == 1:
            # (..., n, k) @ (k,) -> (..., n)
            if a.requires_grad:
                ga = g[..., :, None] * B[None, :]
                _acc(a, _unbroadcast(ga, A.shape), own=True)
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(A, -1, -2), g[..., :, None])[..., 0]
                _acc(b, _unbroadcast(gb, B.shape), own=True)
            return
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(B, -1, -2))
            _acc(a, _unbroadcast(ga, A.shape), own=True)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(A, -1, -2), g)
            _acc(b, _unbroadcast(gb, B.shape), own=True)

    _record(out, bw)
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeMismatchError("concat: no tensors given")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.data.shape for p in parts]
        raise ShapeMismatchError(f"concat: shapes {shapes} do not align on axis {axis}") from None
    out = _make(data, any(p.requires_grad for p in parts))
    sizes = [p.data.shape[axis] for p in parts]

    def bw(g):
        offset = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                _acc(p, g[tuple(idx)])
            offset += n

    _record(out, bw)
    return out


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)
    out = _make(np.ascontiguousarray(data), a.requires_grad)

    def bw(g):
        _acc(a, g.reshape(a.data.shape))

    _record(out, bw)
    return out


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _wrap(a)
    out = _make(np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2)), a.requires_grad)

    def bw(g):
        _acc(a, np.ascontiguousarray(np.swapaxes(g, ax1, ax2)), own=True)

    _record(out, bw)
    return out


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)


def _getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float64)
    else:
        data = np.ascontiguousarray(data)
    out = _make(data, a.requires_grad)
    basic = _is_basic_key(key)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g  # basic slices never self-overlap
        else:
            np.add.at(full, key, g)
        _acc(a, full, own=True)

    _record(out, bw)
    return out


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select rows along an axis by integer index; backward scatter-adds."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = _make(np.ascontiguousarray(np.take(a.data, idx, axis=axis)), a.requires_grad)
    unique = idx.ndim == 1 and np.unique(idx).size == idx.size

    def bw(g):
        full = np.zeros_like(a.data)
        sel = (slice(None),) * axis + (idx,)
        if unique:
            full[sel] = g
        else:
            np.add.at(full, sel, g)
        _acc(a, full, own=True)

    _record(out, bw)
    return out


def where(cond, a, b) -> Tensor:
    """Data-level select; gradients route only through the chosen branch."""
    a, b = _wrap(a), _wrap(b)
    c = np.asarray(cond, dtype=bool)
    out = _make(np.where(c, a.data, b.data), a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(np.where(c, g, 0.0), a.data.shape), own=True)
        if b.requires_grad:
            _acc(b, _unbroadcast(np.where(c, 0.0, g), b.data.shape), own=True)

    _record(out, bw)
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    out = _make(y, a.requires_grad)

    def bw(g):
        _acc(a, g * (1.0 - y * y), own=True)

    _record(out, bw)
    return out


def sqrt(a) -> Tensor:
    a = _wrap(a)
    y = np.sqrt(a.data)
    out = _make(y, a.requires_grad)

    def bw(g):
        _acc(a, g * (0.5 / y), own=True)

    _record(out, bw)
    return out


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)
    out = _make(y, a.requires_grad)

    def bw(g):
        _acc(a, g * y, own=True)

    _record(out, bw)
    return out


def sin(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.sin(a.data), a.requires_grad)

    def bw(g):
        _acc(a, g * np.cos(a.data), own=True)

    _record(out, bw)
    return out


def cos(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.cos(a.data), a.requires_grad)

    def bw(g):
        _acc(a, -g * np.sin(a.data), own=True)

    _record(out, bw)
    return out


def absolute(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.abs(a.data), a.requires_grad)

    def bw(g):
        _acc(a, g * np.sign(a.data), own=True)

    _record(out, bw)
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), a.requires_grad)

    def bw(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg, a.data.shape))

    _record(out, bw)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = _make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), a.requires_grad)
    n = a.data.size if axis is None else a.data.size // out.data.size

    def bw(g):
        if axis is None:
            _acc(a, np.broadcast_to(g / n, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg / n, a.data.shape))

    _record(out, bw)
    return out


def tmax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties send the gradient to the first maximum."""
    a = _wrap(a)
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out_data = data if keepdims else np.squeeze(data, axis=axis)
    out = _make(np.ascontiguousarray(out_data), a.requires_grad)

    def bw(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), gg, axis=axis)
        _acc(a, full, own=True)

    _record(out, bw)
    return out


def sum_abs(a) -> Tensor:
    """L1 reduction over all elements."""
    a = _wrap(a)
    out = _make(np.asarray(np.abs(a.data).sum()), a.requires_grad)

    def bw(g):
        _acc(a, g * np.sign(a.data), own=True)

    _record(out, bw)
    return out


def sum_sq(a) -> Tensor:
    """Squared-L2 reduction over all elements."""
    a = _wrap(a)
    out = _make(np.asarray((a.data * a.data).sum()), a.requires_grad)

    def bw(g):
        _acc(a, g * 2.0 * a.data, own=True)

    _record(out, bw)
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis; rows are nonnegative and sum to one."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _make(y, a.requires_grad)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _acc(a, y * (g - dot), own=True)

    _record(out, bw)
    return out


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (pre-affine); eps guards zero variance."""
    a = _wrap(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = _make(y, a.requires_grad)

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        _acc(a, inv * (g - gm - y * gy), own=True)

    _record(out, bw)
    return out
