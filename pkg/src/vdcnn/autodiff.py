"""Dense tensors and a tape-based reverse-mode differentiation engine.

Every differentiable operation computes its result eagerly with numpy and, if a
:class:`Tape` is active and at least one input requires a gradient, appends a
record holding the inputs, the output and a closure that maps the output
gradient to input gradients. Records are appended in execution order, so the
tape is already topologically sorted and ``backward`` only has to walk it in
reverse.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

_PRECISIONS = {32: np.float32, 64: np.float64}
_dtype = np.float32
_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class TapeConsumedError(RuntimeError):
    """``backward`` was called twice on the same tape."""


class GradCheckError(FloatingPointError):
    """A finite-difference evaluation produced a non-finite value."""

    def __init__(self, param_name: str, message: str):
        super().__init__(f"{param_name}: {message}")
        self.param_name = param_name


def set_precision(bits: int) -> None:
    """Select 32- or 64-bit reals for all tensors created from now on."""
    global _dtype
    if bits not in _PRECISIONS:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _dtype = _PRECISIONS[bits]


def get_dtype() -> type:
    return _dtype


def get_precision() -> int:
    return 64 if _dtype is np.float64 else 32


@contextmanager
def precision(bits: int) -> Iterator[None]:
    old = get_precision()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(old)


class Tensor:
    """Row-major dense array of reals.

    ``data`` is always a contiguous array owned by the tensor. Reshapes copy.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _dtype, copy=True, order="C")
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal constructor: takes ownership without copying
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = False
        t.grad = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

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

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named trainable tensor with a gradient buffer of the same shape."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class Record:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block are
    recorded. Tapes nest, the innermost one receives the records.
    """

    def __init__(self):
        self.records: list[Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.consumed:
            raise TapeConsumedError("backward already ran on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        produced = {id(r.output) for r in self.records}
        if id(loss) not in produced:
            raise ValueError("loss was not produced by an operation on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if id(inp) in produced:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                else:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
        self.records = []


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording; the previous tape stack is restored afterwards."""
    saved = list(_stack())
    _local.tapes = []
    try:
        yield
    finally:
        _local.tapes = saved


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(kind: str, inputs: Sequence, out: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out`` as a Tensor and log it on the active tape when needed."""
    result = Tensor._wrap(out)
    tape = current_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.records.append(Record(kind, tuple(inputs), result, backward_fn))
    return result


# -- elementary operations ---------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return record("matmul", (a, b), A @ B, bw)


def _channel_view(vec_shape: tuple, map_shape: tuple) -> Optional[tuple]:
    # length-C vector against a (..., C, s) map
    if len(vec_shape) == 1 and len(map_shape) >= 2 and map_shape[-2] == vec_shape[0]:
        return (vec_shape[0], 1)
    return None


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> tuple:
    """Return the shapes to reshape ``a`` and ``b`` to before a numpy op."""
    if a.shape == b.shape or a.size == 1 and a.ndim == 0 or b.size == 1 and b.ndim == 0:
        return a.shape, b.shape
    view = _channel_view(b.shape, a.shape)
    if view is not None:
        return a.shape, view
    view = _channel_view(a.shape, b.shape)
    if view is not None:
        return view, b.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    # channel broadcast: sum over everything but the channel axis
    axes = tuple(i for i in range(g.ndim) if i != g.ndim - 2)
    return g.sum(axis=axes).reshape(shape)


def _binary(kind: str, a, b, fwd, grads) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = _broadcast_shapes(a, b, kind)
    A, B = a.data.reshape(sa), b.data.reshape(sb)
    out = fwd(A, B)

    def bw(g):
        ga, gb = grads(g, A, B)
        return (
            None if ga is None else _reduce_to(ga, a.shape),
            None if gb is None else _reduce_to(gb, b.shape),
        )

    return record(kind, (a, b), out, bw)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, A, B: (g, g))


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, A, B: (g, -g))


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, A, B: (g * B, g * A))


def relu(x) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0).astype(x.data.dtype), lambda g: (g * mask,))


def elementwise(op: str, *args) -> Tensor:
    fns = {"add": add, "sub": sub, "mul": mul, "relu": relu}
    if op not in fns:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fns[op](*args)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape).copy()
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return record("reshape", (x,), out, lambda g: (g.reshape(old),))


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    return record("sum", (x,), out, lambda g: (np.broadcast_to(g, shape).copy(),))


# -- finite-difference checking ---------------------------------------------


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-6,
    max_entries: Optional[int] = None,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
    n_steps: int = 3,
    reference_bits: Optional[int] = None,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``f`` takes no arguments, reads the current values of ``params`` and returns
    a scalar tensor. The relative error of one entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_entries`` set, each tensor is
    checked at that many entries drawn without replacement; otherwise every
    entry is checked.

    Each entry is differenced at steps ``epsilon * 10**-j`` for
    ``j < n_steps``; the estimate taken is the one whose neighbour on the
    ladder agrees best with it. A step that straddles a ReLU or max-selection
    kink disagrees with its smaller neighbour and is passed over, while smooth
    entries keep the largest (least roundoff-prone) step. ``n_steps=1`` is the
    plain central difference. ``reference_bits=64`` evaluates the
    finite differences in 64-bit arithmetic (from the same parameter values)
    while the analytic gradient keeps the working precision.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    names = list(names) if names is not None else [getattr(p, "name", f"param{i}") for i, p in enumerate(params)]
    for p in params:
        p.requires_grad = True
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    saved = None
    if reference_bits is not None:
        saved = [p.data for p in params]
        for p in params:
            p.data = p.data.astype(_PRECISIONS[reference_bits])

    def evaluate(name: str) -> float:
        with no_grad():
            if reference_bits is not None:
                with precision(reference_bits):
                    val = f().item()
            else:
                val = f().item()
        if not np.isfinite(val):
            raise GradCheckError(name, "non-finite loss under perturbation")
        return val

    def central(flat, i, h, name):
        orig = flat[i]
        flat[i] = orig + h
        up = float(flat[i]) - float(orig)
        fp = evaluate(name)
        flat[i] = orig - h
        down = float(orig) - float(flat[i])
        fm = evaluate(name)
        flat[i] = orig
        return (fp - fm) / (up + down)

    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for p, a, name in zip(params, analytic, names):
            if not np.all(np.isfinite(a)):
                raise GradCheckError(name, "non-finite analytic gradient")
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for i in idx:
                ladder = [central(flat, i, epsilon * 10.0 ** -j, name) for j in range(n_steps)]
                if n_steps == 1:
                    numeric = ladder[0]
                else:
                    gaps = [abs(ladder[j] - ladder[j + 1]) for j in range(n_steps - 1)]
                    numeric = ladder[int(np.argmin(gaps))]
                an = float(a.reshape(-1)[i])
                err = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
                worst = max(worst, err)
    finally:
        if saved is not None:
            for p, d in zip(params, saved):
                p.data = d
    return worst
