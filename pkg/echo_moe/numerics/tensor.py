"""
Dense tensors and the reverse-mode gradient tape.

A :class:`Tensor` is an immutable 64-bit array value. Operations in
:mod:`echo_moe.numerics.functional` record themselves on the innermost active
:class:`GradTape` whenever one of their inputs requires a gradient; with no tape
active nothing is recorded. :func:`backward` replays the tape in reverse
recording order, which is a reverse topological order of the graph.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..exceptions import ContractError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_local = threading.local()


def _as_array(data: Any) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable dense real array with shape metadata."""

    __slots__ = ("_data", "_requires_grad", "__weakref__")

    def __init__(self, data: Any, requires_grad: bool = False):
        self._data = data if _is_frozen_f64(data) else _as_array(data)
        self._requires_grad = requires_grad

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values, row-major."""
        return self._data

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self._data.shape)

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return np.array(self._data, dtype=np.float64)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the implementations live in functional.
    def __add__(self, other: Any) -> Tensor:
        from . import functional as F

        return F.add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        from . import functional as F

        return F.add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        from . import functional as F

        return F.mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        from . import functional as F

        return F.mul(other, self)

    def __neg__(self) -> Tensor:
        from . import functional as F

        return F.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        from . import functional as F

        return F.matmul(self, other)

    @property
    def T(self) -> Tensor:
        from . import functional as F

        return F.transpose(self)


def _is_frozen_f64(data: Any) -> bool:
    return (
        isinstance(data, np.ndarray)
        and data.dtype == np.float64
        and not data.flags.writeable
    )


class Parameter(Tensor):
    """
    Named trainable leaf tensor.

    A frozen parameter never requires a gradient, so operations on it are not
    recorded and it never receives a gradient entry.
    """

    __slots__ = ("name", "frozen")

    def __init__(self, name: str, data: Any, frozen: bool = False):
        super().__init__(data, requires_grad=False)
        self.name = name
        self.frozen = frozen

    @property
    def requires_grad(self) -> bool:
        return not self.frozen

    def assign(self, data: Any) -> None:
        """Replace the values; shape must not change. Reserved for optimizers and loaders."""
        arr = _as_array(data)
        if arr.shape != self._data.shape:
            raise ContractError(
                f"cannot assign shape {arr.shape} to parameter {self.name} of shape {self.shape}"
            )
        self._data = arr

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


@dataclass(frozen=True)
class TapeNode:
    """One recorded primitive application."""

    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class GradTape:
    """
    Ordered record of primitive applications.

    Use as a context manager; the tape is confined to the thread that entered it.

    Example:
        >>> with GradTape() as tape:
        ...     loss = F.sum(F.matmul(x, w))
        >>> grads = backward(tape, loss)
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> GradTape:
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = []
            _local.stack = stack
        stack.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)


def current_tape() -> GradTape | None:
    """The innermost active tape of this thread, if any."""
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(
    tape: GradTape,
    loss: Tensor,
    params: Iterable[Parameter] | None = None,
) -> dict[str, np.ndarray]:
    """
    Propagate d(loss)/d(parameter) through the tape.

    Args:
        tape: Tape the loss was computed under
        loss: Scalar loss tensor
        params: Optional parameters to report; trainable ones not reachable from
            the loss receive an explicit zero gradient

    Returns:
        Mapping from parameter name to gradient. Frozen parameters never appear.

    Raises:
        ContractError: If the loss is not a scalar or the tape is empty
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if len(tape) == 0:
        raise ContractError("backward() called on an empty tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    leaves: dict[int, Parameter] = {}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        input_grads = node.backward(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if isinstance(inp, Parameter):
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = np.array(ig, dtype=np.float64)

    result = {p.name: grads[key] for key, p in leaves.items() if key in grads}
    if params is not None:
        for p in params:
            if not p.frozen and p.name not in result:
                result[p.name] = np.zeros(p.shape, dtype=np.float64)
    logger.debug(f"backward: {len(tape)} nodes, {len(result)} parameter gradients")
    return result
