"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable op appends a :class:`Record` to the innermost active
:class:`Tape`. Outside a tape ops run eagerly and record nothing, which is
how inference is done. There is no broadcasting: shapes must match exactly,
the single exception being the bias row of :func:`affine`.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

GradFn = Callable[[list], list]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's precondition."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "producer", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.producer: Record | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.producer is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    outputs: tuple[Tensor, ...]
    backward: GradFn


@dataclass(eq=False)
class Tape:
    """Ordered op records; recording order is a topological order."""

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def _emit(op: str, inputs: Sequence[Tensor], outs: Sequence[np.ndarray], grad_fn: GradFn):
    needs = any(t.requires_grad for t in inputs)
    results = tuple(Tensor(o, requires_grad=needs, dtype=o.dtype) for o in outs)
    tape = active_tape()
    if needs and tape is not None:
        rec = Record(op, tuple(inputs), results, grad_fn)
        for r in results:
            r.producer = rec
        tape.records.append(rec)
    return results


def _one(op, inputs, out, grad_fn) -> Tensor:
    return _emit(op, inputs, [out], lambda g: grad_fn(g[0]))[0]


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _one("matmul", (a, b), A @ B, lambda g: [g @ B.T, A.T @ g])


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w.T + b`` for x (N, k), w (m, k), b (m,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine: incompatible {x.shape}, {w.shape}, {b.shape}")
    X, W = x.data, w.data
    out = X @ W.T
    out += b.data
    return _one("affine", (x, w, b), out, lambda g: [g @ W, g.T @ X, g.sum(axis=0)])


# --- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _one("add", (a, b), a.data + b.data, lambda g: [g, g])


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _one("mul", (a, b), A * B, lambda g: [g * B, g * A])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: stable for any sign, one transcendental per entry
    y = x * 0.5
    np.tanh(y, out=y)
    y *= 0.5
    y += 0.5
    return y


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _one("sigmoid", (a,), y, lambda g: [g * y * (1 - y)])


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _one("tanh", (a,), y, lambda g: [g * (1 - y * y)])


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _one("relu", (a,), a.data * pos, lambda g: [g * pos])


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "mul": mul}


def elementwise(op: str, *args: Tensor) -> Tensor:
    if op in _UNARY and len(args) == 1:
        return _UNARY[op](args[0])
    if op in _BINARY and len(args) == 2:
        return _BINARY[op](*args)
    raise ValueError(f"unknown elementwise op {op!r} with {len(args)} operands")


# --- structural -----------------------------------------------------------


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last: leading extents differ {a.shape} vs {b.shape}")
    k = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _one("concat_last", (a, b), out, lambda g: [g[..., :k], g[..., k:]])


def _fill(grads: list, like: Sequence[Tensor]) -> list[np.ndarray]:
    return [np.zeros_like(t.data) if g is None else g for g, t in zip(grads, like)]


def split_last(a: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if any(s <= 0 for s in sizes) or sum(sizes) != a.shape[-1]:
        raise ShapeError(f"split_last: sizes {list(sizes)} do not partition {a.shape[-1]}")
    cuts = np.cumsum(sizes)[:-1]
    parts = np.split(a.data, cuts, axis=-1)
    outs: tuple[Tensor, ...] = ()

    def grad_fn(gs):
        return [np.concatenate(_fill(gs, outs), axis=-1)]

    outs = _emit("split_last", (a,), parts, grad_fn)
    return list(outs)


def stack_rows(ts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors with equal trailing extent along the leading axis."""
    if not ts:
        raise ShapeError("stack_rows: empty input")
    width = ts[0].shape[1:]
    if any(t.shape[1:] != width for t in ts):
        raise ShapeError("stack_rows: trailing extents differ")
    cuts = np.cumsum([t.shape[0] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=0)
    return _one("stack_rows", tuple(ts), out, lambda g: np.split(g, cuts, axis=0))


def split_rows(a: Tensor, n: int) -> list[Tensor]:
    """Inverse of :func:`stack_rows` for ``n`` equal blocks."""
    if n <= 0 or a.shape[0] % n:
        raise ShapeError(f"split_rows: {a.shape[0]} rows not divisible into {n} blocks")
    parts = np.split(a.data, n, axis=0)
    outs: tuple[Tensor, ...] = ()

    def grad_fn(gs):
        return [np.concatenate(_fill(gs, outs), axis=0)]

    outs = _emit("split_rows", (a,), parts, grad_fn)
    return list(outs)


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    shape = a.shape
    return _one("sum", (a,), np.asarray(a.data.sum(), dtype=a.dtype),
                lambda g: [np.broadcast_to(g, shape).copy()])


# --- loss -----------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {y.size} labels for {n} rows")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, y].mean(), dtype=logits.dtype)

    def grad_fn(g):
        d = np.exp(logp)
        d[rows, y] -= 1
        return [d * (g / n)]

    return _one("softmax_cross_entropy", (logits,), loss, grad_fn)


# --- backward -------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf that requires it.

    Leaves on the tape that the loss does not reach, and any ``params`` absent
    from the tape, end up with a zero gradient rather than ``None``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        gouts = [grads.pop(id(o), None) for o in rec.outputs]
        if all(g is None for g in gouts):
            continue
        for inp, g in zip(rec.inputs, rec.backward(gouts)):
            if g is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=inp.dtype)
                else:
                    inp.grad += g
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = g if prev is None else prev + g
    for rec in tape.records:
        for inp in rec.inputs:
            if inp.requires_grad and inp.is_leaf and inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
