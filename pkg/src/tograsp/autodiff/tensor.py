"""Tensor values and the reverse-mode tape that differentiates them."""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import NumericalError

_local = threading.local()


def _dtype() -> np.dtype:
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the float type new tensors are coerced to.

    float32 is the working precision; float64 exists for gradient checks of
    deep compositions where f32 finite differences are noise dominated.
    """
    prev = _dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = prev


class Tensor:
    """Dense float array that can take part in a :class:`Tape`.

    ``grad`` is populated by :meth:`Tape.backward` for every tensor with
    ``requires_grad`` set; it always has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        dt = _dtype()
        if arr.dtype != dt:
            arr = arr.astype(dt)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the real work lives in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.scale(_as_tensor(other), -1.0))

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Operations executed inside ``with Tape() as tape:`` on inputs that
    require gradients are appended in execution order, which is a valid
    topological order. :meth:`backward` walks the records in exact reverse.
    Tapes are per thread; nesting pushes a new tape.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor, check_finite: bool = True) -> None:
        if loss.size != 1:
            from ..errors import DimensionError

            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if check_finite and not np.isfinite(loss.data).all():
            raise NumericalError("non-finite loss before backward")
        loss.grad = np.ones_like(loss.data)
        produced = {id(out) for out, _, _ in self.records}
        for out, inputs, fn in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for t, gi in zip(inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
            if out is not loss:
                # intermediate buffers are not needed once consumed
                out.grad = None
        if check_finite:
            for _, inputs, _ in self.records:
                for t in inputs:
                    if t.grad is not None and id(t) not in produced and not np.isfinite(t.grad).all():
                        raise NumericalError(f"non-finite gradient for {t!r}")


def current_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op output, recording it when a tape is active and any input needs grads."""
    out = Tensor._wrap(data)
    tape = current_tape()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                tape.record(out, tuple(inputs), backward)
                break
    return out
