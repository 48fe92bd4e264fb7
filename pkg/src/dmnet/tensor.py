"""Dense tensors and tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array (float32 by default, float64 for
reference evaluation).  Operations in :mod:`dmnet.ops` record a
:class:`Node` on the innermost active :class:`Tape` whenever one of their
inputs requires a gradient; :func:`backward` replays the tape in reverse.

>>> with Tape() as tape:
...     y = ops.sum(ops.mul(x, x))
>>> grads = backward(tape, y)
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """N-d array of reals with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in _FLOAT_TYPES else np.float32
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        """Leaf copy in another precision (used for f64 reference runs)."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the implementations live in dmnet.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


@dataclass
class Node:
    """One recorded operation: ``output = op(*inputs)``.

    ``vjp`` maps the output cotangent to one cotangent per input (``None``
    for inputs that need no gradient).  Saved intermediates live in its
    closure.
    """

    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Tape:
    """Ordered record of operations; usable as a context manager."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


_TAPES: list = []


def active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp) -> Tensor:
    """Wrap ``out_data`` and, when needed, append the producing node to the tape."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        tape.nodes.append(Node(op, tuple(inputs), out, vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> dict:
    """Populate ``.grad`` of every leaf on ``tape`` with d(loss)/d(leaf).

    Leaves are tensors with ``requires_grad`` that no recorded node produced.
    Existing ``.grad`` buffers are overwritten.  Returns ``{id(leaf): grad}``.
    A loss that is not connected to any leaf yields all-zero gradients and a
    warning.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")

    produced = {id(n.output) for n in tape.nodes}
    leaves: dict = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)

    grads: dict = {}
    if id(loss) in produced:
        grads[id(loss)] = np.ones_like(loss.data)
    else:
        warnings.warn("loss is detached from the tape; all gradients are zero", RuntimeWarning)

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = (np.zeros_like(leaf.data) if g is None
                     else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape))
        out[key] = leaf.grad
    return out
