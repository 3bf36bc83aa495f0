"""Dense float64 tensors with a reverse-mode differentiation tape.

Every differentiable operation appends an entry to the active
:class:`ComputationRecord`. ``Tensor.backward`` replays the record in exact
reverse order, accumulating gradients into every reachable tensor that
requires them, and then releases the record.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> y = x.square().sum()
    >>> y.backward()
    >>> x.grad
    array([6.])
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputationRecord",
    "no_grad",
    "current_record",
    "concat",
    "grad_check",
    "EmptyReductionError",
]

PROB_EPS = 1e-7


class EmptyReductionError(ValueError):
    pass


class _Op:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class ComputationRecord:
    """Ordered list of recorded operations.

    Usable as a context manager to make it the active record for the current
    thread; records are never shared between threads.
    """

    def __init__(self):
        self.ops: list[_Op] = []

    def append(self, op: _Op) -> int:
        self.ops.append(op)
        return len(self.ops) - 1

    def clear(self):
        for op in self.ops:
            op.output._node = None
        self.ops.clear()

    def __len__(self):
        return len(self.ops)

    def __enter__(self):
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        self.clear()
        return False


class _State(threading.local):
    def __init__(self):
        self.stack: list[ComputationRecord] = [ComputationRecord()]
        self.enabled = True


_state = _State()


def current_record() -> ComputationRecord:
    return _state.stack[-1]


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_broadcast(a: tuple, b: tuple):
    # equal shapes, scalars, or a trailing-dim vector broadcast over rows
    if a == b or a == () or b == ():
        return
    if len(a) == 2 and (b == (a[1],) or b == (1, a[1]) or b == (a[0], 1)):
        return
    if len(b) == 2 and (a == (b[1],) or a == (1, b[1]) or a == (b[0], 1)):
        return
    if a == (1,) or b == (1,):
        return
    raise ValueError(f"shape mismatch: {a} vs {b}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array that can take part in differentiation.

    Parameters
    ----------
    data : array-like
        Values, converted to a float64 ndarray.
    requires_grad : bool, default=False
        Whether gradients should be accumulated into ``grad``.
    """

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: tuple[ComputationRecord, int] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    # -- recording -------------------------------------------------------

    @staticmethod
    def record(data: np.ndarray, inputs: Sequence["Tensor"], backward_fn: Callable) -> "Tensor":
        """Build an output tensor and append its gradient rule to the record.

        ``backward_fn(grad_out)`` must return one gradient (or None) per input.
        """
        needs = _state.enabled and any(t.requires_grad for t in inputs)
        out = Tensor(data, requires_grad=needs)
        if needs:
            rec = current_record()
            out._node = (rec, rec.append(_Op(tuple(inputs), out, backward_fn)))
        return out

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor; releases the record afterwards."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward without an explicit gradient requires a scalar output")
            grad = np.ones_like(self.data)
        grad = _as_array(grad).reshape(self.data.shape)
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if self._node is None:
            self.grad = grad if self.grad is None else self.grad + grad
            return
        rec, index = self._node
        grads: dict[int, np.ndarray] = {id(self): grad}
        for op in reversed(rec.ops[: index + 1]):
            g_out = grads.pop(id(op.output), None)
            if g_out is None:
                continue
            out = op.output
            out.grad = g_out if out.grad is None else out.grad + g_out
            in_grads = op.backward_fn(g_out)
            for t, g in zip(op.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                if t._node is not None:
                    key = id(t)
                    grads[key] = grads[key] + g if key in grads else g
                else:
                    t.grad = g if t.grad is None else t.grad + g
        rec.clear()

    # -- elementwise -----------------------------------------------------

    def _binary(self, other, fwd, grad_a, grad_b):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.shape, other.shape)
        a, b = self.data, other.data
        out = fwd(a, b)

        def backward(g):
            return (
                _unbroadcast(grad_a(g, a, b, out), a.shape) if self.requires_grad else None,
                _unbroadcast(grad_b(g, a, b, out), b.shape) if other.requires_grad else None,
            )

        return Tensor.record(out, (self, other), backward)

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        return self._binary(other, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other, np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * a / (b * b)
        )

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __neg__(self):
        return Tensor.record(-self.data, (self,), lambda g: (-g,))

    def _unary(self, out, local):
        return Tensor.record(out, (self,), lambda g: (g * local(),))

    def sigmoid(self) -> "Tensor":
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return self._unary(out, lambda: out * (1.0 - out))

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise ValueError("log of non-positive value")
        x = self.data
        return self._unary(np.log(x), lambda: 1.0 / x)

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return self._unary(out, lambda: out)

    def square(self) -> "Tensor":
        x = self.data
        return self._unary(x * x, lambda: 2.0 * x)

    def relu(self) -> "Tensor":
        x = self.data
        return self._unary(np.maximum(x, 0.0), lambda: (x > 0).astype(np.float64))

    def clamp(self, lo: float, hi: float) -> "Tensor":
        x = self.data
        return self._unary(np.clip(x, lo, hi), lambda: ((x >= lo) & (x <= hi)).astype(np.float64))

    def clamp_prob(self, eps: float = PROB_EPS) -> "Tensor":
        return self.clamp(eps, 1.0 - eps)

    def elementwise(self, op_kind: str, other=None) -> "Tensor":
        binary = {"add": Tensor.__add__, "sub": Tensor.__sub__, "mul": Tensor.__mul__}
        unary = {
            "sigmoid": Tensor.sigmoid,
            "log": Tensor.log,
            "exp": Tensor.exp,
            "square": Tensor.square,
            "relu": Tensor.relu,
        }
        if op_kind in binary:
            if other is None:
                raise ValueError(f"{op_kind} needs two operands")
            return binary[op_kind](self, other)
        if op_kind in unary:
            return unary[op_kind](self)
        raise ValueError(f"unknown op_kind {op_kind!r}")

    # -- linear algebra and shape ----------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

        def backward(g):
            return (
                g @ b.T if self.requires_grad else None,
                a.T @ g if other.requires_grad else None,
            )

        return Tensor.record(a @ b, (self, other), backward)

    __matmul__ = matmul

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor.record(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),))

    def take(self, index) -> "Tensor":
        """Select rows (first axis) by an integer index array."""
        index = np.asarray(index, dtype=np.int64)
        orig = self.shape

        def backward(g):
            full = np.zeros(orig)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.record(self.data[index], (self,), backward)

    def __getitem__(self, index):
        return self.take(index)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None) -> "Tensor":
        return self.reduce("sum", axis)

    def mean(self, axis=None) -> "Tensor":
        return self.reduce("mean", axis)

    def reduce(self, op_kind: str, axis=None) -> "Tensor":
        if op_kind not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {op_kind!r}")
        x = self.data
        count = x.size if axis is None else x.shape[axis]
        if op_kind == "mean" and count == 0:
            raise EmptyReductionError("empty reduction")
        out = x.sum(axis=axis)
        scale = 1.0 if op_kind == "sum" else 1.0 / count
        if op_kind == "mean":
            out = out * scale
        shape = x.shape

        def backward(g):
            g = np.asarray(g)
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g * scale, shape).copy(),)

        return Tensor.record(out, (self,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate tensors along ``axis`` (1-D inputs are treated as columns)."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    cols = [t if t.ndim == 2 else t.reshape(-1, 1) for t in tensors]
    arrays = [t.data for t in cols]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])
    orig_shapes = [t.shape for t in tensors]

    def backward(g):
        parts = []
        for i, shape in enumerate(orig_shapes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)].reshape(shape))
        return tuple(parts)

    return Tensor.record(out, tuple(tensors), backward)


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Maximum relative error between autodiff and central-difference gradients.

    Parameters
    ----------
    f : callable
        Maps a tensor to a scalar tensor.
    point : array-like or Tensor
        Where to evaluate the gradient.
    h : float
        Finite-difference step.

    Returns
    -------
    float
        ``max |g_auto - g_fd| / (|g_fd| + 1e-8)`` over all coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = point.data if isinstance(point, Tensor) else _as_array(point)
    base = base.copy()
    with ComputationRecord():
        x = Tensor(base.copy(), requires_grad=True)
        out = f(x)
        if out.data.size != 1:
            raise ValueError("grad_check requires a scalar-valued function")
        out.backward()
        auto = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.size):
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[i] += h
            minus[i] -= h
            fp = f(Tensor(plus.reshape(base.shape))).item()
            fm = f(Tensor(minus.reshape(base.shape))).item()
            flat[i] = (fp - fm) / (2.0 * h)
    err = np.abs(auto - numeric) / (np.abs(numeric) + 1e-8)
    return float(err.max()) if err.size else 0.0
