"""Reverse-mode automatic differentiation on numpy arrays.

The engine is tape based. While a tape is active (see :func:`tape_scope`),
every differentiable operation appends one record holding references to its
input and output tensors plus a vector-Jacobian closure. Records are appended
in execution order, so the tape is already topologically sorted; replaying it
in reverse propagates gradients from a scalar loss to every parameter.

Training paths run in float32; gradient checking runs the same code in
float64. Tensors are treated as immutable once written, except parameter
buffers which the optimizer updates in place between tapes.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GradientError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional value with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_taped")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._taped = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def assert_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(
                f"tensor {self.name or '<unnamed>'} contains non-finite values")

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Ownership contract: vjp closures hand over arrays the engine may
        # keep (fresh allocations, or views of already-finalized output
        # grads), so the first contribution is stored without a copy.
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if g.dtype != self.data.dtype:
            g = g.astype(self.data.dtype)
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={tuple(self.shape)}, dtype={self.data.dtype.name})"


class TapeOp:
    """One recorded operation: output, inputs, and the VJP rule."""

    __slots__ = ("label", "output", "inputs", "vjp")

    def __init__(self, label: str, output: Tensor, inputs: Sequence[Tensor],
                 vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.label = label
        self.output = output
        self.inputs = tuple(inputs)
        self.vjp = vjp


class Tape:
    """Ordered record of operations; inputs of each op precede it."""

    def __init__(self):
        self.ops: list[TapeOp] = []
        self._produced: set[int] = set()

    def record(self, op: TapeOp) -> None:
        self.ops.append(op)
        op.output._taped = True
        self._produced.add(id(op.output))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def __len__(self):
        return len(self.ops)


_ACTIVE_TAPE: Optional[Tape] = None


class tape_scope:
    """Context manager that activates a fresh tape and yields it."""

    def __init__(self):
        self.tape = Tape()
        self._outer: Optional[Tape] = None

    def __enter__(self) -> Tape:
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self.tape
        return self.tape

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        return False


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def needs_grad(*tensors: Tensor) -> bool:
    """True when recording is active and some input participates in autodiff."""
    if _ACTIVE_TAPE is None:
        return False
    return any(t.requires_grad or t._taped for t in tensors)


def record(label: str, output: Tensor, inputs: Sequence[Tensor], vjp) -> None:
    assert _ACTIVE_TAPE is not None
    _ACTIVE_TAPE.record(TapeOp(label, output, inputs, vjp))


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grad on every tensor the loss depends on.

    The loss must be a scalar produced while ``tape`` was active. Gradients
    accumulate into ``Tensor.grad``; leaves not reached by the sweep keep
    their previous grad (usually None).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not tape.produced(loss):
        raise GradientError("loss tensor was not produced on this tape")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for op in reversed(tape.ops):
        out_grad = op.output.grad
        if out_grad is None:
            continue
        grads = op.vjp(out_grad)
        for inp, g in zip(op.inputs, grads):
            if g is None:
                continue
            if inp.requires_grad or inp._taped:
                inp.accumulate_grad(g)


def first_nonfinite_op(tape: Tape) -> Optional[str]:
    """Label of the earliest tape op whose output holds NaN or Inf."""
    for op in tape.ops:
        if not np.all(np.isfinite(op.output.data)):
            return op.label
    return None
