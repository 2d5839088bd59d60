# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a float64 numpy array. Operations from
:mod:`gats_engine.core.ops` record themselves on the innermost active
:class:`Tape` whenever one of their inputs requires a gradient. ``backward``
then replays the tape in exact reverse recording order.

Usage
-----
>>> with Tape() as tape:
...     loss = ops.sum(ops.matmul(a, b))
...     tape.backward(loss)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from gats_engine.core.exceptions import DetachedTapeError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    Dense float64 array with an optional gradient buffer.

    Tensors are treated as immutable after construction; only ``grad`` changes,
    and optimizers rebind ``data`` between steps.

    Parameters
    ----------
    data : array-like
        Values; converted to a fresh float64 array
    requires_grad : bool, default=False
        Whether gradients should be accumulated into ``grad``
    name : str, optional
        Label used in parameter tables and error messages
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_node_id")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.array(data, dtype=DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None
        self._node_id: int = -1

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._tape = None
        out._node_id = -1
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError("item", self.shape, (1,), detail="item() needs a single value")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeMismatchError("accumulate_grad", self.shape, grad.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=DEFAULT_DTYPE)
        else:
            self.grad = self.grad + grad

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    # Operator sugar; the functional API in ops is the canonical surface.
    def __add__(self, other: "Tensor") -> "Tensor":
        from gats_engine.core import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from gats_engine.core import ops
        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from gats_engine.core import ops
        return ops.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from gats_engine.core import ops
        return ops.matmul(self, other)


@dataclass
class TapeNode:
    """One recorded operation."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn


_ACTIVE_TAPES: List["Tape"] = []


def current_tape() -> Optional["Tape"]:
    """Return the innermost active tape, if any."""
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tape:
    """
    Ordered record of differentiable operations.

    A tape is single-owner: it must not be shared between concurrent training
    steps. Recording happens only while the tape is entered as a context manager.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._generation = 0

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if _ACTIVE_TAPES and _ACTIVE_TAPES[-1] is self:
            _ACTIVE_TAPES.pop()
        else:
            _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn) -> None:
        output._tape = self
        output._node_id = len(self.nodes)
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward_fn))

    def reset(self) -> None:
        """Forget all recorded operations; values computed earlier become detached."""
        for node in self.nodes:
            node.output._tape = None
            node.output._node_id = -1
        self.nodes = []
        self._generation += 1

    def backward(self, loss: Tensor) -> None:
        """
        Propagate d(loss)/d(x) to every leaf tensor that requires a gradient.

        Gradients accumulate into ``grad`` across repeated calls until the leaves
        are reset with ``zero_grad``.

        Raises
        ------
        ShapeMismatchError
            If ``loss`` is not a scalar
        DetachedTapeError
            If ``loss`` was not recorded on this tape
        """
        if loss.size != 1:
            raise ShapeMismatchError("backward", loss.shape, (), detail="loss must be a scalar")
        if loss._tape is not self or not (0 <= loss._node_id < len(self.nodes)):
            raise DetachedTapeError("loss was not recorded on this tape (detached or tape reset)")

        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss._node_id + 1]):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward_fn(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor._tape is self:
                    key = id(tensor)
                    if key in pending:
                        pending[key] = pending[key] + grad
                    else:
                        pending[key] = grad
                else:
                    tensor.accumulate_grad(grad)


def backward(loss: Tensor) -> None:
    """Run ``backward`` on the tape that recorded ``loss``."""
    tape = loss._tape
    if tape is None:
        raise DetachedTapeError("loss has no recording tape; run the forward inside `with Tape():`")
    tape.backward(loss)


def check_finite(op: str, values: np.ndarray) -> None:
    """Raise :class:`NonFiniteError` if ``values`` contains NaN or Inf."""
    if not np.all(np.isfinite(values)):
        count = int(values.size - np.count_nonzero(np.isfinite(values)))
        logger.error(f"Operation '{op}' produced {count} non-finite values")
        raise NonFiniteError(op, count)
