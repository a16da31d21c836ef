"""Small reverse-mode autodiff core over numpy arrays.

A Tensor wraps one ndarray plus an optional gradient accumulator.  Ops
record a closure on a tape (the ``_parents`` / ``_backward`` fields);
``Tensor.backward`` replays the tape in reverse topological order.
Float32 is the working precision for training; building everything in
float64 instead turns the same code into a verification mode for
finite-difference checks.

The module also owns the multiply-add tally used for complexity
reporting: while a ``count_madds`` block is active every op adds its
cost to the running counter.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError


class _AutogradState:
    __slots__ = ("enabled",)

    def __init__(self) -> None:
        self.enabled = True


_autograd = _AutogradState()


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / FD probes)."""
    prev = _autograd.enabled
    _autograd.enabled = False
    try:
        yield
    finally:
        _autograd.enabled = prev


class _MaddTally:
    __slots__ = ("active", "madds")

    def __init__(self) -> None:
        self.active = False
        self.madds = 0

    def add(self, n: int) -> None:
        if self.active:
            self.madds += int(n)


_tally = _MaddTally()


@contextlib.contextmanager
def count_madds():
    """Count multiply-adds of all ops run inside the block.

    Yields the tally object; read ``tally.madds`` after the block.
    Not reentrant.
    """
    _tally.active = True
    _tally.madds = 0
    try:
        yield _tally
    finally:
        _tally.active = False


def _count(n: int) -> None:
    if _tally.active:
        _tally.madds += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- inspection ------------------------------------------------------
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
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- gradient plumbing -----------------------------------------------
    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``grad``.

        ``self`` must be scalar unless an explicit same-shape seed is
        given.  Repeated calls keep accumulating.
        """
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.data.shape, "scalar (or pass a seed)")
            seed = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        self._accum(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], (tuple, list)) else shape[0])

    def transpose(self, *axes):
        return permute(self, axes if len(axes) != 1 or not isinstance(axes[0], (tuple, list)) else axes[0])


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _autograd.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):  # tensor * python scalar
        a = as_tensor(a)
        s = float(b)
        data = a.data * s
        _count(data.size)

        def backward_s(g):
            if a.requires_grad:
                a._accum(g * s)

        return _result(data, (a,), backward_s)

    a = as_tensor(a)
    data = a.data * b.data
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g * data)

    return _result(data, (a,), backward)


def tsin(a: Tensor) -> Tensor:
    data = np.sin(a.data)
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g * np.cos(a.data))

    return _result(data, (a,), backward)


def tcos(a: Tensor) -> Tensor:
    data = np.cos(a.data)
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g * -np.sin(a.data))

    return _result(data, (a,), backward)


def tsqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (0.5 / data))

    return _result(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    _count(data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0))

    return _result(data, (a,), backward)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig
    _count(2 * data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _result(data, (a,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)
    _count(4 * data.size)

    def backward(g):
        if a.requires_grad:
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner
            a._accum(g * da)

    return _result(data, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    data = np.logaddexp(0.0, x)  # log(1 + e^x), overflow-safe
    _count(2 * data.size)

    def backward(g):
        if a.requires_grad:
            a._accum(g / (1.0 + np.exp(-x)))

    return _result(data, (a,), backward)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", (a.data.shape if a.ndim < 2 else b.data.shape), "at least 2-d operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.data.shape, f"inner dim {b.data.shape[-2]} to match {b.data.shape}")
    data = a.data @ b.data
    _count(data.size * a.data.shape[-1])

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accum(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accum(_unbroadcast(gb, b.data.shape))

    return _result(data, (a, b), backward)


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return _result(data, (a,), backward)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(g):
        if a.requires_grad:
            a._accum(g.transpose(inv))

    return _result(data, (a,), backward)


def flip(a: Tensor, axis: int) -> Tensor:
    data = np.flip(a.data, axis=axis)

    def backward(g):
        if a.requires_grad:
            a._accum(np.flip(g, axis=axis))

    return _result(data, (a,), backward)


def roll2d(a: Tensor, sy: int, sx: int) -> Tensor:
    """Cyclic shift of the two leading (spatial) axes."""
    data = np.roll(a.data, (sy, sx), axis=(0, 1))

    def backward(g):
        if a.requires_grad:
            a._accum(np.roll(g, (-sy, -sx), axis=(0, 1)))

    return _result(data, (a,), backward)


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, bounds, axis=axis)
        for p, piece in zip(parts, pieces):
            if p.requires_grad:
                p._accum(piece)

    return _result(data, tuple(parts), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != a.data.shape[axis]:
        raise ShapeError("split", a.data.shape, f"axis {axis} summing to {sum(sizes)}")
    bounds = np.cumsum(sizes)[:-1]
    pieces = np.split(a.data, bounds, axis=axis)
    outs = []
    for i, piece in enumerate(pieces):
        lo = 0 if i == 0 else int(bounds[i - 1])

        def backward(g, lo=lo, hi=lo + sizes[i]):
            if a.requires_grad:
                idx = [slice(None)] * a.data.ndim
                idx[axis] = slice(lo, hi)
                buf = np.zeros_like(a.data)
                buf[tuple(idx)] = g
                a._accum(buf)

        outs.append(_result(piece.copy(), (a,), backward))
    return outs


def pad2d(a: Tensor, pads: tuple[int, int, int, int], mode: str = "zero") -> Tensor:
    """Pad the two leading spatial axes by (top, bottom, left, right)."""
    t, b, l, r = pads
    H, W = a.data.shape[:2]
    if mode == "zero":
        width = ((t, b), (l, r)) + ((0, 0),) * (a.data.ndim - 2)
        data = np.pad(a.data, width)

        def backward(g):
            if a.requires_grad:
                a._accum(g[t:t + H, l:l + W])

        return _result(data, (a,), backward)
    if mode != "reflect":
        raise ValueError(f"pad2d: unknown mode {mode!r}")
    yi = _reflect_index(H, t, b)
    xi = _reflect_index(W, l, r)
    data = a.data[yi][:, xi]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, (yi[:, None], xi[None, :]), g)
            a._accum(buf)

    return _result(data, (a,), backward)


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    if n == 1:
        return np.zeros(before + 1 + after, dtype=np.intp)
    if before >= n or after >= n:
        raise ShapeError("pad2d", (n,), f"reflect pad ({before},{after}) smaller than extent")
    idx = np.arange(-before, n + after)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx).astype(np.intp)


def crop2d(a: Tensor, y0: int, x0: int, h: int, w: int) -> Tensor:
    data = a.data[y0:y0 + h, x0:x0 + w].copy()

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[y0:y0 + h, x0:x0 + w] = g
            a._accum(buf)

    return _result(data, (a,), backward)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    data = table.data[index]

    def backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, index, g)
            table._accum(buf)

    return _result(data, (table,), backward)


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    _count(a.data.size)

    def backward(g):
        if not a.requires_grad:
            return
        gg = g if (axis is None or keepdims) else np.expand_dims(g, axis)
        a._accum(np.broadcast_to(gg, a.data.shape).copy())

    return _result(np.asarray(data), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else (
        np.prod([a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# -- parameters ----------------------------------------------------------------


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until inside [-2 std, 2 std]."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)
