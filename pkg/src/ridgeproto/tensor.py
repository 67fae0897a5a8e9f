"""Dense numpy tensors with a reverse-mode differentiation tape.

Every differentiable operation appends one node to the active :class:`Tape`.
The tape's recording order is already topological, so :func:`backward`
walks it in exact reverse without a graph search.

Broadcasting is limited to scalar-with-tensor (one operand of size 1);
every other shape change goes through :func:`reshape`.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, DomainError

__all__ = [
    "Tape",
    "Tensor",
    "tensor",
    "backward",
    "no_grad",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp",
    "log",
    "relu",
    "sum",
    "matmul",
    "reshape",
    "transpose",
    "stack",
    "pick",
    "log_softmax",
    "l2_normalize",
    "conv2d",
]


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of operations.

    Use as a context manager to make it the active tape::

        with Tape() as tape:
            loss = ...
            backward(loss)
        tape.clear()
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def record(self, out: "Tensor", parents, fn) -> None:
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(_Node(out, parents, fn))

    def clear(self) -> None:
        for node in self.nodes:
            node.out._tape = None
            node.out._index = None
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False


_default_tape = Tape()
_active_tape: contextvars.ContextVar[Tape] = contextvars.ContextVar("active_tape", default=_default_tape)
_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


def current_tape() -> Tape:
    return _active_tape.get()


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """A real array that may take part in reverse-mode differentiation.

    Only leaves (tensors not produced by a recorded operation) keep a
    ``grad`` buffer; it is allocated at construction when ``requires_grad``
    is set and accumulates across :func:`backward` calls until zeroed.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_index")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._tape = None
        self._index = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # constants adopt the tensor operand's dtype so float32 graphs stay float32
    if isinstance(a, Tensor):
        return a, _as_tensor(b, like=a)
    b = _as_tensor(b)
    return _as_tensor(a, like=b), b


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        current_tape().record(out, tuple(parents), fn)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractViolation("loss does not depend on any tensor that requires grad")
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        loss.grad += seed
        return
    tape = loss._tape
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.nodes[: loss._index + 1]):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        grads = node.backward(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


# ---------------------------------------------------------------- elementwise


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} are not scalar-broadcastable")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _out_shape(a: Tensor, b: Tensor) -> tuple:
    if a.shape == b.shape:
        return a.shape
    return b.shape if a.data.size == 1 else a.shape


def _fit(data: np.ndarray, shape: tuple) -> np.ndarray:
    # size-1 operands broadcast but must not add leading axes
    return data.reshape(shape) if data.shape != shape else data


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_binary(a, b, "add")
    shape = _out_shape(a, b)
    data = _fit(a.data + b.data, shape)
    return _make(data, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_binary(a, b, "sub")
    shape = _out_shape(a, b)
    data = _fit(a.data - b.data, shape)
    return _make(data, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Pointwise product."""
    a, b = _pair(a, b)
    _check_binary(a, b, "mul")
    shape = _out_shape(a, b)
    data = _fit(a.data * b.data, shape)
    return _make(
        data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a constant real."""
    c = float(c)
    return _make(x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _make(np.where(on, x.data, 0).astype(x.dtype), (x,), lambda g: (g * on,))


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    data = np.sum(x.data, axis=axis)

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(np.asarray(data), (x,), fn)


# ---------------------------------------------------------------- shape / linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ContractViolation("transpose expects a matrix")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T.copy(),))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ContractViolation("stack of nothing")
    if any(x.shape != xs[0].shape for x in xs):
        raise ContractViolation("stack: all inputs must share one shape")
    data = np.stack([x.data for x in xs], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _make(data, xs, fn)


def pick(x: Tensor, index) -> Tensor:
    """``out[i] = x[i, index[i]]`` for a matrix ``x``."""
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ContractViolation("pick expects an (N, K) matrix and N indices")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise ContractViolation("pick index outside the class axis")
    rows = np.arange(x.shape[0])

    def fn(g):
        out = np.zeros_like(x.data)
        out[rows, index] = g
        return (out,)

    return _make(x.data[rows, index], (x,), fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse

    def fn(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _make(y, (x,), fn)


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each vector along the last axis by ``max(norm, eps)``.

    A 1-d input is one vector; an ``h x w x d`` map is normalized per pixel.
    """
    norm = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps).astype(x.dtype)
    y = x.data / denom

    def fn(g):
        radial = np.sum(y * g, axis=-1, keepdims=True)
        return (np.where(big, g - y * radial, g) / denom,)

    return _make(y, (x,), fn)


# ---------------------------------------------------------------- convolution


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    # (h, w, c, k, k) -> (h*w, k*k*c) with kernel-row, kernel-col, channel order
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, -1)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 zero-padded "same" convolution of an ``h x w x c_in`` map."""
    if x.ndim != 3 or kernel.ndim != 4 or bias.ndim != 1:
        raise ContractViolation("conv2d expects (h,w,c_in), (k,k,c_in,c_out), (c_out,)")
    k, k2, c_in, c_out = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ContractViolation(f"conv2d kernel must be square with odd extent, got {k}x{k2}")
    if x.shape[2] != c_in or bias.shape[0] != c_out:
        raise ContractViolation(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    h, w, _ = x.shape
    p = k // 2
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    cols = _im2col(xp, k, h, w)
    kmat = kernel.data.reshape(k * k * c_in, c_out)
    out = (cols @ kmat + bias.data).reshape(h, w, c_out)

    def fn(g):
        g2 = g.reshape(h * w, c_out)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(h, w, k, k, c_in)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[i : i + h, j : j + w, :] += dcols[:, :, i, j, :]
            gx = dxp[p : p + h, p : p + w, :]
        return (gx, gk, gb)

    return _make(out, (x, kernel, bias), fn)
