"""Dense channel-first tensors and the computation record used for backpropagation."""

import logging
import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any

import numpy as np

from lessnet.core.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

_state = threading.local()

PRECISIONS: dict[str, type[np.floating[Any]]] = {
    "float32": np.float32,
    "float64": np.float64,
}

Adjoint = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def default_dtype() -> type[np.floating[Any]]:
    """Floating dtype for newly created tensors on this thread (float32 unless overridden)."""
    return getattr(_state, "dtype", np.float32)


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Switch the default dtype for tensors created inside the block.

    ``float32`` is used for training; ``float64`` for gradient verification.
    """
    if name not in PRECISIONS:
        raise ValueError(f"Unknown precision {name!r}, expected one of {sorted(PRECISIONS)}")
    previous = default_dtype()
    _state.dtype = PRECISIONS[name]
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    """Dense N-dimensional real array, channel-first (channels, then spatial axes).

    Leaves created with ``requires_grad=True`` receive ``.grad`` after
    :func:`backward`. Arithmetic operators dispatch to :mod:`lessnet.autograd.ops`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: Any = None,
    ):
        array = np.array(data, dtype=dtype or default_dtype())
        if array.ndim == 0:
            array = array.reshape(1)
        if 0 in array.shape:
            raise ShapeError(f"Tensor extents must be >= 1, got shape {array.shape}")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an array produced by a kernel without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = array if array.ndim > 0 else array.reshape(1)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1:])

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operators (ops imports this module, so import lazily)
    def __add__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from lessnet.autograd import ops

        return ops.neg(self)

    def __getitem__(self, key: Any) -> "Tensor":
        from lessnet.autograd import ops

        return ops.getitem(self, key)


@dataclass
class RecordedOp:
    """One executed primitive: its inputs, output and adjoint."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoint: Adjoint


class ComputationRecord:
    """Ordered list of executed primitives, replayed in reverse by :meth:`backward`.

    A record is confined to the thread that created it. Use it as a context
    manager; operations executed inside the block on tensors that require
    gradients are appended to it.
    """

    def __init__(self) -> None:
        self.entries: list[RecordedOp] = []
        self._outputs: set[int] = set()
        self._thread = threading.get_ident()

    def __enter__(self) -> "ComputationRecord":
        _stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: RecordedOp) -> None:
        if threading.get_ident() != self._thread:
            raise RuntimeError("ComputationRecord used from a thread other than its creator")
        self.entries.append(entry)
        self._outputs.add(id(entry.output))

    def produced(self, tensor: Tensor) -> bool:
        return id(tensor) in self._outputs

    def backward(self, loss: Tensor) -> list[Tensor]:
        """Replay adjoints in reverse execution order.

        Sets ``.grad`` on every leaf that requires gradients and was consumed by a
        recorded operation (zeros when no path reaches it). Gradients of values
        consumed several times accumulate additively.

        Returns:
            The leaves whose ``.grad`` was set, in first-use order
        """
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")

        leaves: dict[int, Tensor] = {}
        for entry in self.entries:
            for tensor in entry.inputs:
                if tensor.requires_grad and id(tensor) not in self._outputs:
                    leaves.setdefault(id(tensor), tensor)

        if not self.produced(loss):
            if loss.requires_grad:
                loss.grad = np.ones_like(loss.data)
                return [loss]
            raise ShapeError("backward() called on a loss that was not recorded")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            upstream = grads.pop(id(entry.output), None)
            if upstream is None:
                continue
            input_grads = entry.adjoint(upstream)
            for tensor, grad in zip(entry.inputs, input_grads, strict=True):
                if grad is None or not tensor.requires_grad:
                    continue
                if not np.isfinite(grad).all():
                    raise NonFiniteError(entry.op, stage="backward")
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        for key, leaf in leaves.items():
            grad = grads.get(key)
            leaf.grad = (
                np.zeros_like(leaf.data) if grad is None else np.asarray(grad, dtype=leaf.dtype)
            )
        return list(leaves.values())


def _stack() -> list[ComputationRecord]:
    stack = getattr(_state, "records", None)
    if stack is None:
        stack = []
        _state.records = stack
    return stack


def record() -> ComputationRecord:
    """Start a new computation record (use as ``with record() as rec:``)."""
    return ComputationRecord()


def current_record() -> ComputationRecord | None:
    stack = _stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, computation: ComputationRecord | None = None) -> list[Tensor]:
    """Backpropagate ``loss`` through ``computation`` (default: the active record)."""
    computation = computation or current_record()
    if computation is None:
        raise ShapeError("backward() called outside a recorded forward pass")
    return computation.backward(loss)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], adjoint: Adjoint) -> Tensor:
    """Wrap a kernel result, validate it and append it to the active record."""
    if not np.isfinite(data).all():
        raise NonFiniteError(op)
    out = Tensor.wrap(data)
    computation = current_record()
    if computation is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        computation.append(RecordedOp(op, tuple(inputs), out, adjoint))
    return out
