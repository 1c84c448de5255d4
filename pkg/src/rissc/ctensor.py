"""Complex tensors with define-by-run reverse-mode autodiff.

Gradients follow the convention ``grad = dL/dRe(z) + 1j * dL/dIm(z)``
(twice the conjugate Wirtinger derivative), so a real-valued optimizer can
treat the real and imaginary parts as independent real parameters.

Ops executed while a :class:`Tape` is active, and that touch at least one
tensor with ``requires_grad``, are recorded on that tape.  Outside a tape
nothing is recorded and the same code runs as a plain forward pass.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "CTensor",
    "Tape",
    "GradCheckReport",
    "create",
    "tensor",
    "constant",
    "ew_binary",
    "add",
    "sub",
    "mul",
    "scale",
    "conj",
    "matmul",
    "real",
    "abs_",
    "abs2",
    "angle",
    "clip",
    "add_const",
    "total",
    "mean",
    "reshape",
    "backward",
    "grad_check",
    "record",
]

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "rissc_active_tape", default=None
)


class CTensor:
    """Complex128 N-D array with an optional gradient slot.

    The value is frozen after construction; only ``grad`` (and, through
    :meth:`assign`, the optimizer) may change it.
    """

    __slots__ = ("_data", "requires_grad", "grad", "_from_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.complex128)
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._from_op = False
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def re(self) -> np.ndarray:
        return self._data.real

    @property
    def im(self) -> np.ndarray:
        return self._data.imag

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def assign(self, values) -> None:
        """Overwrite the value in place of an optimizer write."""
        arr = np.array(values, dtype=np.complex128)
        if arr.shape != self.shape:
            raise ValueError(f"assign shape {arr.shape} != tensor shape {self.shape}")
        arr.setflags(write=False)
        self._data = arr

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "CTensor":
        return CTensor(self._data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"CTensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(value, like: CTensor) -> CTensor:
    if isinstance(value, CTensor):
        return value
    return CTensor(np.broadcast_to(np.asarray(value, dtype=np.complex128), like.shape))


class Tape:
    """Ordered record of executed ops, replayed backwards by :meth:`backward`.

    Use as a context manager; tapes are per-context (``contextvars``), so
    independent threads can each hold their own active tape.
    """

    def __init__(self):
        self.records: list[tuple[CTensor, tuple[CTensor, ...], Callable]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: CTensor) -> None:
        backward(loss, self)


def record(value: np.ndarray, parents: Sequence[CTensor], vjp: Callable) -> CTensor:
    """Wrap ``value`` as an op output and put it on the active tape.

    ``vjp(g_out)`` must return one gradient (or None) per parent, in the
    convention documented at module level.
    """
    out = CTensor(value)
    out._from_op = True
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.records.append((out, tuple(parents), vjp))
    return out


def create(shape: Sequence[int], values: Sequence[complex], requires_grad: bool = False) -> CTensor:
    shape = tuple(int(s) for s in shape)
    values = np.asarray(values, dtype=np.complex128).ravel()
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ValueError(f"{values.size} values given for shape {shape} ({expected} elements)")
    return CTensor(values.reshape(shape), requires_grad=requires_grad)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> CTensor:
    return CTensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> CTensor:
    return CTensor(data)


# --------------------------------------------------------------------------
# element-wise ops
# --------------------------------------------------------------------------

def _check_ew(a: CTensor, b: CTensor) -> None:
    # b may match a exactly or match a's trailing dims (per-row parameters)
    if a.shape == b.shape:
        return
    nb = len(b.shape)
    if 0 < nb < len(a.shape) and a.shape[-nb:] == b.shape:
        return
    raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def ew_binary(a: CTensor, b: CTensor, op: str) -> CTensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown element-wise op {op!r}")


def add(a: CTensor, b: CTensor) -> CTensor:
    _check_ew(a, b)

    def vjp(g):
        return g, _reduce_to(g, b.shape)

    return record(a.data + b.data, (a, b), vjp)


def sub(a: CTensor, b: CTensor) -> CTensor:
    _check_ew(a, b)

    def vjp(g):
        return g, -_reduce_to(g, b.shape)

    return record(a.data - b.data, (a, b), vjp)


def mul(a: CTensor, b: CTensor) -> CTensor:
    _check_ew(a, b)
    av, bv = a.data, b.data

    def vjp(g):
        return g * np.conj(bv), _reduce_to(g * np.conj(av), b.shape)

    return record(av * bv, (a, b), vjp)


def scale(a: CTensor, c: complex) -> CTensor:
    c = complex(c)
    return record(a.data * c, (a,), lambda g: (g * np.conj(c),))


def add_const(a: CTensor, c) -> CTensor:
    return record(a.data + np.asarray(c, dtype=np.complex128), (a,), lambda g: (g,))


def conj(a: CTensor) -> CTensor:
    return record(np.conj(a.data), (a,), lambda g: (np.conj(g),))


def real(a: CTensor) -> CTensor:
    return record(a.data.real.astype(np.complex128), (a,), lambda g: (g.real.astype(np.complex128),))


def abs_(a: CTensor) -> CTensor:
    """|z|; the gradient at z = 0 is taken as 0."""
    z = a.data
    mag = np.abs(z)

    def vjp(g):
        safe = np.where(mag > 0, mag, 1.0)
        return (np.where(mag > 0, g.real * z / safe, 0.0),)

    return record(mag.astype(np.complex128), (a,), vjp)


def abs2(a: CTensor) -> CTensor:
    z = a.data
    return record((z.real**2 + z.imag**2).astype(np.complex128), (a,), lambda g: (2.0 * g.real * z,))


def angle(a: CTensor) -> CTensor:
    """arg(z) in (-pi, pi]; zero gradient at z = 0."""
    z = a.data
    m2 = z.real**2 + z.imag**2

    def vjp(g):
        safe = np.where(m2 > 0, m2, 1.0)
        return (np.where(m2 > 0, g.real * 1j * z / safe, 0.0),)

    return record(np.angle(z).astype(np.complex128), (a,), vjp)


def clip(a: CTensor, lo: float, hi: float) -> CTensor:
    """Clamp the real part into [lo, hi]; gradient is zero where clamped."""
    x = a.data.real
    inside = (x >= lo) & (x <= hi)
    return record(
        np.clip(x, lo, hi).astype(np.complex128),
        (a,),
        lambda g: (np.where(inside, g.real, 0.0).astype(np.complex128),),
    )


# --------------------------------------------------------------------------
# structural / reductions
# --------------------------------------------------------------------------

def reshape(a: CTensor, shape: Sequence[int]) -> CTensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def total(a: CTensor) -> CTensor:
    shp = a.shape
    return record(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shp).copy(),))


def mean(a: CTensor) -> CTensor:
    shp, n = a.shape, max(a.size, 1)
    return record(np.array(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shp).copy(),))


def matmul(a: CTensor, b: CTensor) -> CTensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        ga = g @ bv.conj().T if a.requires_grad else None
        gb = av.conj().T @ g if b.requires_grad else None
        return ga, gb

    return record(av @ bv, (a, b), vjp)


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def backward(loss: CTensor, tape: Tape) -> None:
    """Accumulate d(loss) into ``.grad`` of every reachable leaf tensor.

    Leaves are tensors created directly (not by an op) with
    ``requires_grad``; their ``grad`` is added to, not replaced.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.data.ravel()[0].imag != 0.0:
        raise ValueError("loss has a nonzero imaginary part")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.complex128)}
    leaves: dict[int, CTensor] = {}
    for out, parents, vjp in reversed(tape.records):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for parent, g in zip(parents, vjp(g_out)):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.complex128)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if not parent._from_op:
                leaves[key] = parent
    if not loss._from_op and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    autodiff: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[[CTensor], CTensor],
    point: CTensor,
    step: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare the tape gradient of ``f`` at ``point`` with central differences.

    The relative error is ``max|ad - fd| / max(max|fd|, max|ad|, 1e-12)``;
    a zero gradient on both sides counts as exact agreement.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = CTensor(point.data, requires_grad=True)
    with Tape() as tape:
        loss = f(x)
    backward(loss, tape)
    ad = np.zeros(x.shape, dtype=np.complex128) if x.grad is None else x.grad

    def value(arr):
        return float(f(CTensor(arr)).data.real.ravel()[0])

    base = point.data.copy()
    fd = np.zeros(base.shape, dtype=np.complex128)
    flat = fd.reshape(-1)
    for idx in range(base.size):
        for unit, part in ((1.0, 1.0), (1j, 1j)):
            plus, minus = base.copy().reshape(-1), base.copy().reshape(-1)
            plus[idx] += step * unit
            minus[idx] -= step * unit
            d = (value(plus.reshape(base.shape)) - value(minus.reshape(base.shape))) / (2 * step)
            flat[idx] += d * part
    denom = max(np.abs(fd).max(initial=0.0), np.abs(ad).max(initial=0.0))
    err = 0.0 if denom == 0 else float(np.abs(ad - fd).max() / max(denom, 1e-12))
    return GradCheckReport(err, tol, ad, fd)
