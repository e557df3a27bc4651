"""Dense float64 tensors with taped reverse-mode gradients.

Every forward operation runs eagerly on numpy arrays. While a ``GradTape``
is active (see ``recording``), each operation appends one node holding a
closure that maps the output gradient back to input gradients; replaying
the tape in reverse visits every node exactly once in reverse topological
order, because nodes are appended in execution order. Inference paths
simply run with no active tape and allocate nothing.

All math is double precision: the test suite leans on tight gradient
tolerances and speed is secondary.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, ShapeError


class Tensor:
    """Immutable dense array of 64-bit floats, row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor values must be finite")
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr) -> "Tensor":
        # Internal fast path: takes ownership of a freshly computed array.
        t = cls.__new__(cls)
        a = np.asarray(arr, dtype=np.float64)
        if a.flags.writeable:
            a.flags.writeable = False
        t.data = a
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.ravel(order="C")

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Operator sugar; every operator routes through the taped primitives.
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

    def __matmul__(self, other):
        return matmul(self, other)


def zeros(*shape: int) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=np.float64))


def ones(*shape: int) -> Tensor:
    return Tensor._wrap(np.ones(shape, dtype=np.float64))


def full(shape: tuple[int, ...], value: float) -> Tensor:
    return Tensor._wrap(np.full(shape, value, dtype=np.float64))


def eye(n: int) -> Tensor:
    return Tensor._wrap(np.eye(n, dtype=np.float64))


class _Node:
    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output, inputs, vjp):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class GradTape:
    """Ordered record of executed primitive operations."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE_TAPE: GradTape | None = None


@contextmanager
def recording(tape: GradTape):
    """Make ``tape`` the active recording target within the block."""
    global _ACTIVE_TAPE
    if _ACTIVE_TAPE is not None:
        raise ContractError("a GradTape is already recording; nesting is not supported")
    _ACTIVE_TAPE = tape
    try:
        yield tape
    finally:
        _ACTIVE_TAPE = None


def is_recording() -> bool:
    return _ACTIVE_TAPE is not None


def _record(output: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.nodes.append(_Node(output, inputs, vjp))


def record_op(output: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
    """Register a fused operation on the active tape (no-op when idle).

    ``vjp`` receives the output gradient and must return one gradient per
    input (``None`` for inputs that do not need one).
    """
    _record(output, inputs, vjp)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_op(a, b, forward, name: str):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = forward(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{name}: cannot combine shapes {a.shape} and {b.shape}") from None
    return a, b, Tensor._wrap(out_data)


def add(a, b) -> Tensor:
    a, b, out = _broadcast_op(a, b, np.add, "add")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    _record(out, (a, b), vjp)
    return out


def sub(a, b) -> Tensor:
    a, b, out = _broadcast_op(a, b, np.subtract, "sub")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    _record(out, (a, b), vjp)
    return out


def mul(a, b) -> Tensor:
    a, b, out = _broadcast_op(a, b, np.multiply, "mul")

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    _record(out, (a, b), vjp)
    return out


def div(a, b) -> Tensor:
    a, b, out = _broadcast_op(a, b, np.divide, "div")

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    _record(out, (a, b), vjp)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor._wrap(-a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-d tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
    out = Tensor._wrap(a.data @ b.data)

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    _record(out, (a, b), vjp)
    return out


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {a.shape}")
    out = Tensor._wrap(a.data.T.copy())
    _record(out, (a,), lambda g: (g.T,))
    return out


def linear(x, w) -> Tensor:
    """``x @ w.T`` for row-major batches, or ``w @ x`` for a single vector.

    ``w`` is stored ``[out_features, in_features]`` in both cases.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-d, got {w.shape}")
    if x.ndim == 1:
        if x.shape[0] != w.shape[1]:
            raise ShapeError(f"linear: cannot apply weight {w.shape} to vector {x.shape}")
        out = Tensor._wrap(w.data @ x.data)

        def vjp(g):
            return g @ w.data, np.outer(g, x.data)

    elif x.ndim == 2:
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"linear: cannot apply weight {w.shape} to rows {x.shape}")
        out = Tensor._wrap(x.data @ w.data.T)

        def vjp(g):
            return g @ w.data, g.T @ x.data

    else:
        raise ShapeError(f"linear: input must be 1-d or 2-d, got {x.shape}")
    _record(out, (x, w), vjp)
    return out


def affine(x, w, b) -> Tensor:
    """Weight application plus bias: ``w @ x + b`` (rows of a 2-d ``x`` are
    independent samples)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ShapeError(f"affine: bias {b.shape} does not match weight {w.shape}")
    y = linear(x, w)
    return add(y, b)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._wrap(expit(x.data))

    def vjp(g):
        y = out.data
        return (g * y * (1.0 - y),)

    _record(out, (x,), vjp)
    return out


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._wrap(np.tanh(x.data))

    def vjp(g):
        y = out.data
        return (g * (1.0 - y * y),)

    _record(out, (x,), vjp)
    return out


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._wrap(np.exp(x.data))
    _record(out, (x,), lambda g: (g * out.data,))
    return out


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    out = Tensor._wrap(np.log(x.data))
    _record(out, (x,), lambda g: (g / x.data,))
    return out


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt requires non-negative inputs")
    out = Tensor._wrap(np.sqrt(x.data))
    _record(out, (x,), lambda g: (g * 0.5 / out.data,))
    return out


def tsum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._wrap(np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    _record(out, (x,), vjp)
    return out


def tmean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return div(tsum(x, axis=axis, keepdims=keepdims), float(count))


def _normalize_mask(valid, width: int) -> np.ndarray:
    if valid is None:
        return np.ones(width, dtype=bool)
    if isinstance(valid, (int, np.integer)):
        if not 0 <= valid <= width:
            raise ShapeError(f"valid length {valid} out of range for width {width}")
        return np.arange(width) < int(valid)
    mask = np.asarray(valid, dtype=bool)
    if mask.shape != (width,):
        raise ShapeError(f"mask shape {mask.shape} does not match width {width}")
    return mask


def masked_softmax(scores, valid=None) -> Tensor:
    """Softmax over the last axis restricted to valid positions.

    Masked positions are excluded before exponentiation, so their output
    probability is exactly zero. ``valid`` may be a boolean mask over the
    last axis, an integer prefix length, or ``None`` for all-valid. The
    maximum valid score is subtracted for stability.
    """
    scores = _as_tensor(scores)
    if scores.ndim not in (1, 2):
        raise ShapeError(f"masked_softmax needs a 1-d or 2-d tensor, got {scores.shape}")
    width = scores.shape[-1]
    mask = _normalize_mask(valid, width)
    if not mask.any():
        raise DomainError("masked_softmax: every position is masked")
    s = scores.data[..., mask]
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out_data = np.zeros_like(scores.data)
    out_data[..., mask] = p
    out = Tensor._wrap(out_data)

    def vjp(g):
        gv = g[..., mask]
        inner = (gv * p).sum(axis=-1, keepdims=True)
        d = np.zeros_like(scores.data)
        d[..., mask] = p * (gv - inner)
        return (d,)

    _record(out, (scores,), vjp)
    return out


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    out = Tensor._wrap(np.reshape(x.data, shape))
    _record(out, (x,), lambda g: (np.reshape(g, x.data.shape),))
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}"
        ) from None
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    _record(out, tuple(parts), vjp)
    return out


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("stack needs at least one tensor")
    if any(p.shape != parts[0].shape for p in parts):
        raise ShapeError(f"stack: shapes differ: {[p.shape for p in parts]}")
    out = Tensor._wrap(np.stack([p.data for p in parts], axis=axis))

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    _record(out, tuple(parts), vjp)
    return out


def index_axis(x, axis: int, i: int) -> Tensor:
    """Select index ``i`` along ``axis``, dropping that axis."""
    x = _as_tensor(x)
    if not 0 <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for {x.shape}")
    if not 0 <= i < x.shape[axis]:
        raise ShapeError(f"index {i} out of range for axis {axis} of {x.shape}")
    out = Tensor._wrap(np.take(x.data, i, axis=axis))

    def vjp(g):
        full_grad = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[axis] = i
        full_grad[tuple(sl)] = g
        return (full_grad,)

    _record(out, (x,), vjp)
    return out


def rows(x, start: int, stop: int) -> Tensor:
    """Contiguous row slice ``x[start:stop]`` along axis 0."""
    x = _as_tensor(x)
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {x.shape}")
    out = Tensor._wrap(x.data[start:stop].copy())

    def vjp(g):
        full_grad = np.zeros_like(x.data)
        full_grad[start:stop] = g
        return (full_grad,)

    _record(out, (x,), vjp)
    return out


def pad_rows(x, total: int) -> Tensor:
    """Zero-pad along axis 0 up to ``total`` rows."""
    x = _as_tensor(x)
    n = x.shape[0]
    if total < n:
        raise ShapeError(f"cannot pad {n} rows down to {total}")
    out_data = np.zeros((total,) + x.shape[1:], dtype=np.float64)
    out_data[:n] = x.data
    out = Tensor._wrap(out_data)
    _record(out, (x,), lambda g: (g[:n].copy(),))
    return out


def where_mask(mask, a, b) -> Tensor:
    """``mask ? a : b`` with a constant (non-differentiable) mask."""
    a, b = _as_tensor(a), _as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    try:
        out = Tensor._wrap(np.where(m, a.data, b.data))
    except ValueError:
        raise ShapeError(
            f"where_mask: cannot broadcast mask {m.shape} with {a.shape} and {b.shape}"
        ) from None
    mf = m.astype(np.float64)

    def vjp(g):
        return _unbroadcast(g * mf, a.data.shape), _unbroadcast(g * (1.0 - mf), b.data.shape)

    _record(out, (a, b), vjp)
    return out


def dropout(x, rate: float, rng: np.random.Generator | None, mode: str) -> Tensor:
    """Inverted dropout: scales kept entries by ``1/(1-rate)`` during
    training; identity at inference or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ContractError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = _as_tensor(x)
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(np.float64)
    return mul(x, Tensor._wrap(keep / (1.0 - rate)))


class Gradients:
    """Gradient lookup produced by ``backward``; absent tensors get zeros."""

    def __init__(self, table: dict):
        self._table = table

    def wrt(self, t: Tensor) -> np.ndarray:
        g = self._table.get(t)
        if g is None:
            return np.zeros(t.shape, dtype=np.float64)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t in self._table


def backward(tape: GradTape, loss: Tensor) -> Gradients:
    """Accumulate gradients of a scalar ``loss`` for every tensor on the tape."""
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    table: dict[Tensor, np.ndarray] = {loss: np.ones(loss.shape, dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = table.get(node.output)
        if g is None:
            continue
        parts = node.vjp(g)
        for inp, part in zip(node.inputs, parts):
            if part is None:
                continue
            prior = table.get(inp)
            table[inp] = part if prior is None else prior + part
    return Gradients(table)


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    theta: Tensor,
    h: float = 1e-5,
) -> float:
    """Max relative error between the taped gradient of ``f`` at ``theta``
    and central finite differences.

    Relative error per coordinate is ``|analytic - numeric| / (|analytic| +
    1e-8)``; the maximum over coordinates is returned.
    """
    tape = GradTape()
    with recording(tape):
        out = f(theta)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("finite_diff_check needs f to return a scalar Tensor")
    analytic = backward(tape, out).wrt(theta).ravel()

    base = theta.data.ravel().copy()
    worst = 0.0
    for i in range(base.size):
        for sign in (+1.0, -1.0):
            base[i] += sign * h
            val = float(f(Tensor._wrap(base.reshape(theta.shape).copy())).item())
            base[i] -= sign * h
            if sign > 0:
                hi = val
            else:
                lo = val
        numeric = (hi - lo) / (2.0 * h)
        rel = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-8)
        worst = max(worst, rel)
    return worst
