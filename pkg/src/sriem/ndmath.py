"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy, checks that the
result is finite, and, when a :class:`Tape` is active and some input
requires a gradient, records a vector-Jacobian closure on that tape.
:func:`backward` replays the tape in reverse recording order.

Tensors are usually 2-D (rows x cols).  Leading batch axes are allowed so
that a whole minibatch of sessions runs through one graph; matmul, softmax
and friends always act on the trailing axes.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateRowError, DimensionError, NonFiniteError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "as_tensor",
    "matmul",
    "add",
    "mul",
    "scale",
    "sigmoid",
    "softmax_row",
    "log",
    "clip",
    "tsum",
    "mean",
    "transpose",
    "reshape",
    "concat",
    "embedding_lookup",
    "index",
]


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def rows(self) -> int:
        return self.data.shape[-2] if self.data.ndim >= 2 else 1

    @property
    def cols(self) -> int:
        return self.data.shape[-1] if self.data.ndim >= 1 else 1

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; every operator is one of the primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("Tensor division is only defined by a scalar constant")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out", "inputs", "vjp", "op")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable, op: str):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


_local = threading.local()


def _stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered log of primitive applications.

    Use as a context manager; primitives executed inside the ``with`` block
    on tensors that require gradients are recorded.  Tapes are thread-local,
    so replicas on different threads never share one.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable, op: str) -> None:
        self.records.append(_Record(out, inputs, vjp, op))
        self._outputs.add(id(out))

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._outputs

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on the tape.

    Leaves are tensors with ``requires_grad`` that no recorded primitive
    produced.  Gradients add onto existing ``.grad`` values; call
    ``zero_grad`` between steps.
    """
    tape = tape if tape is not None else current_tape()
    if tape is None:
        raise ContractError("backward needs a tape")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if loss not in tape:
        raise ContractError("loss was not produced on this tape")

    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = adj.pop(id(rec.out), None)
        if g is None:
            continue
        grads = rec.vjp(g)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = gi
            if inp not in tape:
                leaves[key] = inp
    for key, t in leaves.items():
        g = adj[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


# primitive plumbing ----------------------------------------------------------

def _finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    return data


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable, op: str) -> Tensor:
    _finite(data, op)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = current_tape()
        if tape is not None:
            tape.record(out, inputs, vjp, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# primitives --------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, _swap(b.data))
            if ga.shape != a.shape:
                ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            elif b.ndim == 2 and a.ndim > 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(_swap(a.data), g)
        return ga, gb

    return _emit(out, (a, b), vjp, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}") from exc

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _emit(out, (a, b), vjp, "add")


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}") from exc

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _emit(out, (a, b), vjp, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # 1 / (1 + exp(-x)); exp overflow for x < -709 gives exactly 0, which is the limit
    with np.errstate(over="ignore"):
        y = np.exp(-a.data)
    y += 1.0
    np.reciprocal(y, out=y)
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax_row(a: Tensor, mask=None) -> Tensor:
    """Softmax along the last axis; ``mask`` (bool, broadcastable) marks valid entries.

    Masked entries get probability exactly 0.  Every row must keep at least
    one valid entry.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(m.any(axis=-1)):
            raise DegenerateRowError("softmax row has every entry masked")
        z = np.where(m, x, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.where(m, np.exp(np.where(m, z, 0.0)), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (a,), vjp, "softmax")


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient flows only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(np.asarray(out), (a,), vjp, "sum")


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return scale(tsum(a), 1.0 / a.data.size)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got {a.shape}")
    return _emit(_swap(a.data).copy(), (a,), lambda g: (_swap(g),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shape mismatch: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(out, parts, vjp, "concat")


def embedding_lookup(table: Tensor, indices, padding_idx: int | None = 0) -> Tensor:
    """Gather rows of ``table``; the padding row never receives gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        if padding_idx is not None:
            gt[padding_idx] = 0.0
        return (gt,)

    return _emit(out, (table,), vjp, "embedding")


def index(a: Tensor, key) -> Tensor:
    """Basic or fancy indexing; gradient scatters back with ``np.add.at``."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _emit(np.array(out, dtype=np.float64), (a,), vjp, "index")
