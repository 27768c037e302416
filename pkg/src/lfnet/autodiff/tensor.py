"""Tensor values and the recording tape used for reverse-mode differentiation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive received or produced NaN/Inf."""

    def __init__(self, op: str, value: np.ndarray, step: Optional[int] = None):
        self.op = op
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in '{op}'{where}")


_ACTIVE: list["Tape"] = []


def active_tape() -> Optional["Tape"]:
    return _ACTIVE[-1] if _ACTIVE else None


@dataclass
class TapeEntry:
    op: str
    out: "Tensor"
    inputs: tuple
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; every primitive evaluated inside the ``with``
    block whose inputs require gradients is appended in evaluation order.
    The sign pattern of every LeakyReLU input is kept so finite-difference
    probes can tell when a perturbation crossed a kink.
    """

    entries: list[TapeEntry] = field(default_factory=list)
    kinks: list[np.ndarray] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op, out, inputs, vjp) -> None:
        self.entries.append(TapeEntry(op, out, tuple(inputs), vjp))

    def kink_signature(self) -> list[np.ndarray]:
        return self.kinks


class Tensor:
    """A float64 array that optionally participates in differentiation."""

    __slots__ = ("value", "requires_grad", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor", arr)
        self.value = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, value: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.value = value
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the primitives live in ``ops``.
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

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return ops.mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def backward(tape: Tape, root: Tensor, params: Optional[Sequence[Tensor]] = None) -> dict:
    """Propagate d(root) back through ``tape``.

    Returns a map from tensor to gradient array. When ``params`` is given the
    map contains exactly those tensors, with zeros for any that the root does
    not depend on.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue
        for inp, gi in zip(entry.inputs, entry.vjp(g)):
            if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                leaves[key] = inp
    if params is None:
        return {leaves[k]: g for k, g in grads.items() if k in leaves}
    out = {}
    for p in params:
        g = grads.get(id(p))
        out[p] = np.zeros_like(p.value) if g is None else g
    return out
