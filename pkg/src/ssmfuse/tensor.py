"""Dense rank-4 tensors with a reverse-mode differentiation tape.

Every value in this package is carried by a :class:`Tensor`: four axes
(batch, channel, height, width by convention, reinterpreted freely by the
ops that act on it), row-major float data and an optional reference to the
tape entry that produced it.  Gradients are pulled back through a recorded
forward pass with :func:`backward` and cross-checked against central finite
differences with :func:`grad_check`.

Tensors are immutable values after construction.  A tape is single-writer
and consumable exactly once; independent models may run on separate threads
as long as they do not share a tape.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Extents do not satisfy an operation's shape contract."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite data is required."""


class ContractError(ValueError):
    """An operation precondition was violated."""


class StabilityError(ContractError):
    """A state matrix fails the negativity condition needed for a stable scan."""


class UnreliableCheckError(RuntimeError):
    """grad_check was handed a non-deterministic function."""


_FLOAT_TYPES = (np.float32, np.float64)

# Debug mode asserts finiteness after every op; release mode checks only at
# construction and wherever callers ask explicitly.
_debug_checks = False


def set_debug_checks(on: bool) -> None:
    global _debug_checks
    _debug_checks = bool(on)


def debug_checks() -> bool:
    return _debug_checks


class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list["Tape"] = []


_tapes = _TapeStack()


def active_tape() -> Optional["Tape"]:
    stack = _tapes.stack
    return stack[-1] if stack else None


class Tape:
    """Ordered record of forward operations.

    Entries are appended in execution order, which is automatically a
    topological order; the backward pass walks them exactly once in reverse.
    A tape is single-writer: one thread records and walks it, though
    independent model instances may each run on their own thread.
    """

    def __init__(self):
        self.ops: list[_OpRecord] = []
        self.consumed = False
        self._next_id = 0
        # node id -> Parameter, for leaves that accumulate gradients
        self.param_leaves: dict[int, "Parameter"] = {}

    def __enter__(self) -> "Tape":
        _tapes.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.stack.pop()

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def node_of(self, t: "Tensor") -> int:
        """Return the tape node id of ``t``, registering a leaf if needed."""
        if t._tape is self and t.node_id is not None:
            return t.node_id
        nid = self._new_id()
        t._tape = self
        t.node_id = nid
        if isinstance(t, Parameter):
            self.param_leaves[nid] = t
        return nid

    def record(self, name: str, out: "Tensor", inputs: Sequence["Tensor"],
               backward_fn: Callable[[np.ndarray], tuple]) -> None:
        in_ids = [self.node_of(t) if t.requires_grad else None for t in inputs]
        out._tape = self
        out.node_id = self._new_id()
        self.ops.append(_OpRecord(name, out.node_id, in_ids, backward_fn))


class _OpRecord:
    __slots__ = ("name", "out_id", "in_ids", "backward_fn")

    def __init__(self, name, out_id, in_ids, backward_fn):
        self.name = name
        self.out_id = out_id
        self.in_ids = in_ids
        self.backward_fn = backward_fn


def record() -> Tape:
    """Open a fresh tape; use as ``with record() as tape:``."""
    return Tape()


class Tensor:
    """Rank-4 dense array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensor needs exactly 4 axes, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values rejected at tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # arithmetic sugar is attached by ssmfuse.ops at import time


class Parameter(Tensor):
    """Trainable tensor with a gradient accumulator and a stable name."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def assign(self, values: np.ndarray) -> None:
        """Overwrite the value in place (optimizer updates, checkpoint load)."""
        values = np.asarray(values, dtype=self.data.dtype)
        if values.shape != self.data.shape:
            raise ShapeError(f"parameter {self.name}: cannot assign shape "
                             f"{values.shape} over {self.data.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError(f"parameter {self.name}: non-finite assignment")
        self.data[...] = values

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


class ParamStore:
    """Ordered, uniquely-named collection of Parameters for one model."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}

    def make(self, name: str, values) -> Parameter:
        if name in self.params:
            raise ContractError(f"parameter name {name!r} already taken")
        p = Parameter(np.asarray(values), name, dtype=self.dtype)
        self.params[name] = p
        return p

    def all(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter.

    The loss must be a scalar produced on a live tape.  Gradients add (+=)
    into ``Parameter.grad``; non-parameter leaves are skipped.  A tape can
    be walked only once.
    """
    if loss._tape is None or loss.node_id is None:
        raise ContractError("backward: loss is detached from any tape")
    tape = loss._tape
    if tape.consumed:
        raise ContractError("backward: tape already consumed")
    if loss.shape != (1, 1, 1, 1):
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1, 1, 1), dtype=loss.dtype)}
    for op in reversed(tape.ops):
        g = grads.pop(op.out_id, None)
        if g is None:
            continue
        in_grads = op.backward_fn(g)
        for nid, ig in zip(op.in_ids, in_grads):
            if nid is None or ig is None:
                continue
            prev = grads.get(nid)
            grads[nid] = ig if prev is None else prev + ig
    for nid, param in tape.param_leaves.items():
        g = grads.get(nid)
        if g is not None:
            param.grad += g.reshape(param.grad.shape)


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter],
               epsilon: float = 1e-4) -> float:
    """Compare tape gradients of ``f()`` against central finite differences.

    Returns the max over all parameter coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``f`` must be deterministic and must not open its own tape.
    """
    if epsilon <= 0:
        raise ContractError("grad_check: epsilon must be positive")

    def run() -> float:
        out = f()
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError("grad_check: f must return a scalar tensor")
        return out.item()

    base = run()
    if run() != base:
        raise UnreliableCheckError("grad_check: f is not deterministic")

    for p in params:
        p.zero_grad()
    with record():
        loss = f()
        if loss.requires_grad:  # a constant objective has no graph to walk
            backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            up = run()
            flat[i] = keep - epsilon
            down = run()
            flat[i] = keep
            numeric = (up - down) / (2.0 * epsilon)
            a = float(ana.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
