"""Define-by-run reverse-mode differentiation over numpy arrays.

Every forward op that touches a tensor with ``requires_grad`` appends a record
to the active :class:`Tape`. ``Tape.backward`` walks the records in reverse and
accumulates gradients additively. A tape can be consumed once; open a new one
for the next forward pass::

    with Tape() as tape:
        loss = mean(mul(a, b))
    tape.backward(loss)

Outside any ``with Tape()`` block ops go to a per-thread implicit tape, which
is replaced once it has been consumed. Forward outputs are checked for
finiteness so that an overflow fails where it happens instead of surfacing
later as a NaN loss.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "name", "_tape")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __truediv__ = lambda self, other: div(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); start a new Tape")
        out._tape = self
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
        """Populate ``.grad`` on every tensor that requires it.

        ``params`` lists leaves that should receive a gradient even if they are
        not connected to ``loss`` (they get zeros).
        """
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise TapeError("backward() already ran on this tape; start a new Tape")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        touched: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self.records):
            g = grads.get(id(rec.out))
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, tg in zip(rec.inputs, in_grads):
                if tg is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + tg
                else:
                    grads[key] = tg
                    touched[key] = t
        for key, t in touched.items():
            if t.requires_grad:
                t.grad = grads[key]
        for p in params:
            if id(p) not in touched:
                p.grad = np.zeros_like(p.values)
        self.records.clear()


def active_tape() -> Tape:
    """Innermost ``with Tape()`` block, else this thread's implicit tape."""
    stack = _tape_stack()
    if stack:
        return stack[-1]
    tape = getattr(_local, "implicit", None)
    if tape is None or tape.consumed:
        tape = _local.implicit = Tape()
    return tape


class no_grad:
    """Forward ops inside this block are not recorded."""

    def __enter__(self):
        _local.disabled = getattr(_local, "disabled", 0) + 1

    def __exit__(self, *exc):
        _local.disabled -= 1


def _recording() -> bool:
    return not getattr(_local, "disabled", 0)


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Run backward on the tape that produced ``loss``."""
    tape = loss._tape
    if tape is None:
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.values)
        for p in params:
            if p is not loss:
                p.grad = np.zeros_like(p.values)
        return
    tape.backward(loss, params)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _wrap2(a, b) -> tuple[Tensor, Tensor]:
    # plain scalars take the dtype of the tensor operand
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    return _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")


def _make(values: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    _check_finite(values, op)
    needs = _recording() and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=needs)
    if needs:
        active_tape().record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (only leading-axis / size-1 broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    _broadcast_shape(a, b, "add")
    return _make(
        a.values + b.values, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    _broadcast_shape(a, b, "sub")
    return _make(
        a.values - b.values, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    _broadcast_shape(a, b, "mul")
    return _make(
        a.values * b.values, (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)), "mul",
    )


def div(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    _broadcast_shape(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.values / b.values

    def back(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        )

    return _make(out, (a, b), back, "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.values, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.values)
    return _make(out, (a,), lambda g: (g / a.values,), "log")


def square(a) -> Tensor:
    a = _wrap(a)
    return _make(a.values * a.values, (a,), lambda g: (2.0 * g * a.values,), "square")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.values > 0
    return _make(np.where(mask, a.values, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def softplus(a) -> Tensor:
    a = _wrap(a)
    x = a.values
    out = np.logaddexp(0.0, x).astype(x.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(out, (a,), lambda g: (g * sig,), "softplus")


def clamp_max(a, limit: float) -> Tensor:
    """min(a, limit); gradient is zero where the clamp is active."""
    a = _wrap(a)
    keep = a.values <= limit
    out = np.where(keep, a.values, limit).astype(a.dtype)
    return _make(out, (a,), lambda g: (g * keep,), "clamp_max")


# reductions ----------------------------------------------------------------

def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = _wrap(a)
    out = a.values.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(out), (a,), back, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    count = a.values.size if axis is None else a.shape[axis]
    out = a.values.mean(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy(),)

    return _make(np.asarray(out), (a,), back, "mean")


# linear algebra and layout -------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(
        a.values @ b.values, (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g), "matmul",
    )


def concat_last_dim(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(_wrap(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat_last_dim needs at least one tensor")
    lead = tensors[0].shape[:-1]
    for t in tensors:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat_last_dim: incompatible shapes {tensors[0].shape} and {t.shape}")
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.values for t in tensors], axis=-1), tensors, back, "concat_last_dim")


def _check_range(a: Tensor, start: int, stop: int, op: str) -> None:
    width = a.shape[-1]
    if not 0 <= start <= stop <= width:
        raise ShapeError(f"{op}: range [{start}, {stop}) outside last dimension of shape {a.shape}")


def zero_mask_slice(a, start: int, stop: int) -> Tensor:
    """Copy of ``a`` with last-dim columns ``[start, stop)`` set to zero."""
    a = _wrap(a)
    _check_range(a, start, stop, "zero_mask_slice")
    out = a.values.copy()
    out[..., start:stop] = 0.0

    def back(g):
        g = g.copy()
        g[..., start:stop] = 0.0
        return (g,)

    return _make(out, (a,), back, "zero_mask_slice")


def drop_slice(a, start: int, stop: int) -> Tensor:
    """``a`` with last-dim columns ``[start, stop)`` removed."""
    a = _wrap(a)
    _check_range(a, start, stop, "drop_slice")
    out = np.concatenate([a.values[..., :start], a.values[..., stop:]], axis=-1)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[..., :start] = g[..., :start]
        full[..., stop:] = g[..., start:]
        return (full,)

    return _make(out, (a,), back, "drop_slice")


def take_last(a, index) -> Tensor:
    """Pick one entry per row along the last dim: ``out[r] = a[r, index[r]]``."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.int64)
    if a.values.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"take_last: need (B, C) tensor and (B,) index, got {a.shape} and {index.shape}")
    rows = np.arange(a.shape[0])
    out = a.values[rows, index]

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[rows, index] = g
        return (full,)

    return _make(out, (a,), back, "take_last")


# probability ---------------------------------------------------------------

def log_softmax(logits) -> Tensor:
    a = _wrap(logits)
    if a.values.ndim < 1 or a.shape[-1] < 2:
        raise ShapeError(f"log_softmax needs a class dimension of size >= 2, got shape {a.shape}")
    _check_finite(a.values, "log_softmax input")
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),), "log_softmax")


def softmax_values(logits) -> np.ndarray:
    """Plain numpy softmax along the last dim (no tape)."""
    x = np.asarray(logits.values if isinstance(logits, Tensor) else logits, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_from_logits(logits, labels) -> Tensor:
    a = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if a.values.ndim != 2:
        raise ShapeError(f"cross entropy needs (batch, classes) logits, got {a.shape}")
    if labels.shape != (a.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {a.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= a.shape[1]):
        raise ValueError(f"labels must lie in [0, {a.shape[1]}), got range [{labels.min()}, {labels.max()}]")
    return neg(mean(take_last(log_softmax(a), labels)))


def kl_from_logits(p_logits, q_logits) -> Tensor:
    """Batch mean of KL(softmax(p) || softmax(q)) over the last dim."""
    p, q = _wrap(p_logits), _wrap(q_logits)
    if p.shape != q.shape:
        raise ShapeError(f"kl_from_logits: incompatible shapes {p.shape} and {q.shape}")
    log_p = log_softmax(p)
    log_q = log_softmax(q)
    per_row = sum(mul(exp(log_p), sub(log_p, log_q)), axis=-1)
    return mean(per_row)
