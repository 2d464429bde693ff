"""Tensor and tape for reverse-mode differentiation.

Operations are only recorded while a :class:`Tape` is active, so code that
runs outside a ``with Tape():`` block is plain numpy with no bookkeeping.

Complex tensors follow the convention that the gradient of a real loss ``L``
with respect to ``z`` is ``dL/dRe(z) + 1j * dL/dIm(z)``.
"""

from __future__ import annotations

import threading
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "detach",
    "as_tensor",
    "current_tape",
]

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the operations applied to gradient-carrying tensors.

    Nodes are appended as operations execute, so the record is already in
    topological order. A tape supports a single :meth:`backward` call.

    Examples
    --------
    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4., 6.])
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, tuple, Callable]] = []
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse across threads
            stack.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: "Tensor", parents: tuple, fn: Callable) -> None:
        if self._consumed:
            raise RuntimeError("tape has already been used for a backward pass")
        for p in parents:
            if p.requires_grad and p._tape is not self:
                self._leaves[id(p)] = p
        out._tape = self
        self._nodes.append((out, parents, fn))

    def backward(self, loss: "Tensor") -> None:
        """Populate ``.grad`` on every gradient-carrying tensor of the graph."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape has already been used for a backward pass")
        self._consumed = True

        grads: dict[int, np.ndarray] = {}
        if loss.requires_grad:
            grads[id(loss)] = np.ones_like(loss.data)
            if loss._tape is not self:
                loss.grad = grads[id(loss)]
        for out, parents, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            out.grad = g
            for p, gp in zip(parents, fn(g)):
                if gp is None or not p.requires_grad:
                    continue
                gp = _fit(gp, p)
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + gp
                else:
                    grads[key] = gp
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            leaf.grad = np.zeros_like(leaf.data) if g is None else g
        self._nodes.clear()
        self._leaves.clear()


def backward(loss: "Tensor") -> None:
    """Run reverse-mode differentiation from a scalar ``loss``.

    Leaves of a graph that contains no gradient-carrying path (for example,
    everything was detached) end up with zero gradients; no error is raised.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
        return
    tape.backward(loss)


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


def _fit(g: np.ndarray, p: "Tensor") -> np.ndarray:
    g = _unbroadcast(np.asarray(g), p.data.shape)
    if not np.iscomplexobj(p.data) and np.iscomplexobj(g):
        g = np.ascontiguousarray(g.real)  # strided views defeat BLAS
    if g.dtype != p.data.dtype:
        g = g.astype(p.data.dtype)
    return g


def _real_dtype(x: np.ndarray) -> np.dtype:
    return np.finfo(x.dtype).dtype if x.dtype.kind in "fc" else np.dtype(np.float64)


class Tensor:
    """N-dimensional array that can take part in a differentiation tape.

    Parameters
    ----------
    data : array_like
        Values; floating point data keeps its precision.
    requires_grad : bool
        Whether gradients should be collected for this tensor.
    dtype : numpy dtype, optional
        Cast ``data`` on construction.
    """

    __array_ufunc__ = None
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind in "biu" and dtype is None:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self.name = name

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return detach(self)

    # arithmetic -----------------------------------------------------------

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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # methods --------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sin(self):
        return sin(self)

    def abs(self):
        return tabs(self)


def as_tensor(x: Any, like: Tensor | None = None) -> Tensor:
    """Wrap ``x`` as a constant tensor, matching the precision of ``like``."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and arr.dtype.kind in "biuf" and like.data.dtype.kind in "fc":
        arr = arr.astype(_real_dtype(like.data), copy=False)
    return Tensor(arr)


def _binary(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    return as_tensor(a, like=b), b


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._record(out, tuple(parents), fn)
    return out


def detach(x: Any) -> Tensor:
    """Return a tensor sharing ``x``'s values through which no gradient flows."""
    if isinstance(x, Tensor):
        return Tensor(x.data)
    return Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)

    def fn(g):
        ga = g * np.conj(b.data) if a.requires_grad else None
        gb = g * np.conj(a.data) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data / b.data

    def fn(g):
        ga = g / np.conj(b.data) if a.requires_grad else None
        gb = -g * np.conj(out / b.data) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), fn)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("power supports scalar exponents only")
    p = float(exponent)
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    from scipy.special import erf

    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    out = (x * cdf).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * (cdf + x * pdf),))


def tabs(a) -> Tensor:
    """Absolute value; the modulus for complex input.

    The gradient at zero is taken as zero.
    """
    a = as_tensor(a)
    x = a.data
    if np.iscomplexobj(x):
        out = np.abs(x)

        def fn(g):
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out > 0, g * x / safe, 0.0),)

        return _make(out, (a,), fn)
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def real(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.real(a.data).copy(), (a,), lambda g: (g.astype(a.data.dtype),))


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _make(out, (a,), fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(
        isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items
    )


def getitem(a, index) -> Tensor:
    """Indexing and gathering; repeated fancy indices accumulate gradient."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data
    out = a.data[index]
    basic = _is_basic_index(index)

    def fn(g):
        full = np.zeros_like(a.data, dtype=np.result_type(a.data, g))
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True) if basic else out, (a,), fn)


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    ref = next((t for t in tensors if isinstance(t, Tensor)), None)
    ts = [as_tensor(t, like=ref) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, fn)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts]
    return concatenate(expanded, axis=axis)


def matmul(a, b) -> Tensor:
    a, b = _binary(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")

    def fn(g):
        ga = g @ np.conj(np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = np.conj(a2).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.conj(np.swapaxes(a.data, -1, -2)) @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), fn)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), fn)


def pad(a, pad_width, value: float = 0.0) -> Tensor:
    """Constant padding; ``pad_width`` holds one ``(before, after)`` pair per axis."""
    a = as_tensor(a)
    width = [(int(lo), int(hi)) for lo, hi in pad_width]
    if len(width) != a.ndim:
        raise ValueError("pad_width needs one (before, after) pair per axis")
    out = np.pad(a.data, width, mode="constant", constant_values=value)
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(width, a.shape))
    return _make(out, (a,), lambda g: (g[crop],))


def where(cond, a, b) -> Tensor:
    a, b = _binary(a, b)
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)

    def fn(g):
        return np.where(cond, g, 0), np.where(cond, 0, g)

    return _make(np.where(cond, a.data, b.data), (a, b), fn)
