"""Tensors, the gradient tape, and reverse-mode backpropagation.

The engine is define-by-run: a Tape is opened around the forward pass,
each operation appends its backward rule to it, and backward() replays
the records in reverse order, accumulating gradients on the inputs.
Without an active tape, operations run forward-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_debug_checks = False
_active_tape: Optional["Tape"] = None


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation of every op output (slow; meant for tests)."""
    global _debug_checks
    _debug_checks = enabled


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """An n-d float array with an optional gradient slot.

    Data is stored as a C-contiguous (row-major) array, float32 by default.
    float64 arrays are kept as-is so gradient checks can run the same code
    at higher precision; everything else is cast to float32.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flags})"


@dataclass
class Parameter:
    """A named trainable tensor. Names must be unique within a model."""

    name: str
    tensor: Tensor

    def __post_init__(self) -> None:
        self.tensor.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of operations from one forward pass.

    Entering the tape as a context manager makes it the active recording
    target; tapes do not nest.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = None

    def _record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                backward: BackwardFn) -> None:
        output.node_id = len(self.nodes)
        self.nodes.append(TapeNode(op, inputs, output, backward))

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _active_tape


def apply_op(name: str, inputs: Sequence[Tensor], out_data: np.ndarray,
             make_backward: Callable[[], BackwardFn]) -> Tensor:
    """Wrap an op result and record its backward rule if a tape is active.

    make_backward is only invoked when recording, so forward-only passes
    do not retain intermediate buffers captured by the closure.
    """
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{name}: non-finite values in output")
    out = Tensor(out_data)
    tape = _active_tape
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(name, tuple(inputs), out, make_backward())
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(input) for everything recorded on the tape.

    The loss must be a scalar. Gradients sum over fan-out; after the walk
    every requires_grad leaf that participated holds a gradient of the
    same shape as its data.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.data.shape:
                raise ValueError(
                    f"backward({node.op}): gradient shape {gi.shape} does not "
                    f"match input shape {t.data.shape}")
            t.grad = gi if t.grad is None else t.grad + gi
