"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable primitive is a :class:`Function` subclass. Applying one to
tensors that require gradients appends an entry to the active
:class:`Tape`; :func:`backward` walks that tape in exact reverse recording
order.

Recording rules:

* inside ``with Tape() as tape:`` ops record into ``tape``;
* inside ``with no_grad():`` nothing is recorded;
* otherwise ops record into a per-thread default tape, cleared with
  :func:`reset_default_tape`. Entries whose output is no longer referenced
  drop out on their own, so the default tape does not grow across steps.
"""
from __future__ import annotations

import logging
import threading
import weakref
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from functools import partial
from typing import Any

import numpy as np

from src.errors import ContractError

logger = logging.getLogger(__name__)

ArrayLike = np.ndarray | float | int | Sequence[Any]


class Function:
    """One differentiable primitive.

    ``forward`` receives the input payloads as arrays; ``backward`` receives the
    gradient of the output and returns one gradient (or ``None``) per input.
    """

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        fn = cls(*inputs)
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs), copy=False)
        tape = _active_tape()
        if tape is not None and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            tape.record(fn, out)
        return out


class Tensor:
    """Row-major float64 array with an optional gradient buffer."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: str | None = None,
        copy: bool = True,
    ) -> None:
        if copy:
            self.data: np.ndarray = np.array(data, dtype=np.float64, order="C")
        else:
            self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        self._index = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # Arithmetic delegates to src.autograd.ops (bound at the bottom of this module).
    def __add__(self, other: Tensor | float) -> Tensor:
        return ops.add(self, other)

    def __radd__(self, other: float) -> Tensor:
        return ops.add(self, other)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return ops.sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        return ops.add(ops.neg(self), other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        return ops.mul(self, other)

    def __rmul__(self, other: float) -> Tensor:
        return ops.mul(self, other)

    def __truediv__(self, other: Tensor | float) -> Tensor:
        return ops.div(self, other)

    def __neg__(self) -> Tensor:
        return ops.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return ops.matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return ops.transpose(self, axes)


class Tape:
    """Ordered record of applied primitives; inputs always precede outputs.

    Outputs are held weakly. When an output is collected no live loss can
    reach its entry (a live consumer would still hold it as an input), so the
    entry is dropped at once, which in turn releases that entry's inputs. A
    long-lived tape therefore only keeps graphs that are still referenced.
    """

    def __init__(self) -> None:
        self.entries: dict[int, tuple[Function, weakref.ref[Tensor]]] = {}
        self._seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, fn: Function, out: Tensor) -> None:
        out._tape = self
        out._index = self._seq
        self.entries[self._seq] = (fn, weakref.ref(out, partial(self._collected, self._seq)))
        self._seq += 1

    def _collected(self, seq: int, _ref: weakref.ref[Tensor]) -> None:
        self.entries.pop(seq, None)

    def reset(self) -> None:
        self.entries = {}

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _stack().pop()

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.entries or loss._tape is not self:
            raise ContractError("backward called with an empty tape or a loss recorded elsewhere")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        reached: dict[int, Tensor] = {id(loss): loss}
        for seq, (fn, ref) in reversed(list(self.entries.items())):
            out = ref()
            if seq > loss._index or out is None:
                continue
            g_out = grads.get(id(out))
            if g_out is None:
                continue
            for inp, g_in in zip(fn.inputs, fn.backward(g_out), strict=True):
                if g_in is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g_in
                else:
                    grads[key] = np.asarray(g_in, dtype=np.float64).reshape(inp.shape)
                    reached[key] = inp

        for key, tensor in reached.items():
            g = grads[key]
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


class _TapeState(threading.local):
    def __init__(self) -> None:
        self.stack: list[Tape | None] = []
        self.default = Tape()


_state = _TapeState()


def _stack() -> list[Tape | None]:
    return _state.stack


def _active_tape() -> Tape | None:
    if _state.stack:
        return _state.stack[-1]
    return _state.default


def default_tape() -> Tape:
    return _state.default


def reset_default_tape() -> None:
    _state.default.reset()


@contextmanager
def no_grad() -> Iterator[None]:
    _state.stack.append(None)
    try:
        yield
    finally:
        _state.stack.pop()


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor that reaches ``loss``.

    Repeated calls accumulate into existing gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss was not recorded on any tape (empty tape)")
    loss._tape.backward(loss)


def tensor(data: ArrayLike, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


from src.autograd import ops  # noqa: E402  (ops needs Tensor/Function defined first)
