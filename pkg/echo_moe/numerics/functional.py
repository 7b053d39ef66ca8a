"""
Primitive differentiable operations.

Each operation computes its value with numpy in 64-bit precision and, when a
gradient tape is active and an input requires a gradient, records a closure
that maps the output gradient to input gradients.

Broadcasting is limited to three cases: identical shapes, a 0-d scalar against
any shape, and a 1-d vector against the trailing dimension of a matrix or
higher-rank tensor. Anything else needs an explicit reshape.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

import numpy as np

from ..exceptions import ContractError, DataError, DimensionError
from .rng import SplitMix64
from .tensor import BackwardFn, GradTape, TapeNode, Tensor, current_tape

logger = logging.getLogger(__name__)

__all__ = [
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "exp",
    "log",
    "sigmoid",
    "silu",
    "softmax",
    "log_softmax",
    "causal_softmax",
    "layer_norm",
    "gather_rows",
    "scatter_rows",
    "take_along",
    "scale_rows",
    "concat_rows",
    "concat_cols",
    "slice_cols",
    "dropout",
    "cross_entropy",
]


def as_tensor(x: Any) -> Tensor:
    """Wrap constants as non-differentiable tensors."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    tape: GradTape | None = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad and tape is not None:
        tape.record(TapeNode(op, out, inputs, backward))
    return out


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_broadcast(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if a == b or a == () or b == ():
        return
    if len(b) == 1 and len(a) >= 2 and a[-1] == b[0]:
        return
    if len(a) == 1 and len(b) >= 2 and b[-1] == a[0]:
        return
    raise DimensionError(f"{op}: shapes {a} and {b} do not broadcast")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return _emit("add", a.data + b.data, (a, b), backward)


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _reduce_to(g, sa), -_reduce_to(g, sb)

    return _emit("sub", a.data - b.data, (a, b), backward)


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _emit("mul", ad * bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), the smooth nonlinearity shared by every feed-forward path."""
    x = a.data
    s = _sigmoid(x)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * (s + x * s * (1.0 - s)),)

    return _emit("silu", x * s, (a,), backward)


# ---------------------------------------------------------------------------
# Linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a (m x k) and b (k x n).

    Raises:
        DimensionError: If either operand is not 2-d or inner dimensions differ
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g @ bd.T, ad.T @ g

    return _emit("matmul", ad @ bd, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _emit("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from e
    return _emit("reshape", out, (a,), lambda g: (g.reshape(src),))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    src = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _emit("sum", np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    src = a.shape
    count = a.size if axis is None else src[axis]
    if count == 0:
        raise DimensionError(f"mean over an empty axis of shape {src}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is None:
            return (np.broadcast_to(g / count, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), src).copy(),)

    return _emit("mean", np.asarray(a.data.mean(axis=axis)), (a,), backward)


# ---------------------------------------------------------------------------
# Normalizations
# ---------------------------------------------------------------------------


def _stable_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """
    Softmax along ``axis`` with max-subtraction.

    Raises:
        DimensionError: If the axis is invalid or empty
    """
    if a.ndim == 0 or not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax: invalid axis {axis} for shape {a.shape}")
    if a.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} in shape {a.shape}")
    p = _stable_softmax(a.data, axis)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", p, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"log_softmax: empty axis {axis} in shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", out, (a,), backward)


def causal_softmax(scores: Tensor) -> Tensor:
    """
    Row softmax of a square score matrix restricted to columns j <= i.

    Entries above the diagonal are exact zeros; no infinities are materialized.
    """
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionError(f"causal_softmax: expected a square matrix, got {scores.shape}")
    n = scores.shape[0]
    keep = np.tril(np.ones((n, n), dtype=bool))
    masked = np.where(keep, scores.data, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True) if n else masked
    e = np.where(keep, np.exp(shifted), 0.0)
    p = e / e.sum(axis=1, keepdims=True) if n else e

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit("causal_softmax", p, (scores,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """
    Normalize over the last dimension, then scale by gamma and shift by beta.

    Uses the population variance. ``eps`` must be non-negative; a zero ``eps`` is
    accepted for exact hand-computed fixtures on non-constant inputs.
    """
    if eps < 0:
        raise ContractError(f"layer_norm: eps must be non-negative, got {eps}")
    if x.ndim == 0:
        raise DimensionError("layer_norm: input has no feature dimension")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} and beta {beta.shape} must both be ({d},)"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gd
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        dgamma = (flat_g * xhat.reshape(-1, d)).sum(axis=0)
        dbeta = flat_g.sum(axis=0)
        return dx, dgamma, dbeta

    return _emit("layer_norm", out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Indexing and assembly
# ---------------------------------------------------------------------------


def gather_rows(a: Tensor, idx: Sequence[int] | np.ndarray) -> Tensor:
    """Rows ``a[idx]`` of a matrix; repeated indices allowed."""
    if a.ndim != 2:
        raise DimensionError(f"gather_rows: expected a matrix, got shape {a.shape}")
    index = np.asarray(idx, dtype=np.int64).reshape(-1)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for {a.shape[0]} rows")
    src = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(src, dtype=np.float64)
        np.add.at(grad, index, g)
        return (grad,)

    return _emit("gather_rows", a.data[index], (a,), backward)


def scatter_rows(a: Tensor, idx: Sequence[int] | np.ndarray, n_rows: int) -> Tensor:
    """A zero ``n_rows x D`` matrix with ``a``'s rows added at positions ``idx``."""
    if a.ndim != 2:
        raise DimensionError(f"scatter_rows: expected a matrix, got shape {a.shape}")
    index = np.asarray(idx, dtype=np.int64).reshape(-1)
    if index.size != a.shape[0]:
        raise DimensionError(f"scatter_rows: {index.size} indices for {a.shape[0]} rows")
    out = np.zeros((n_rows, a.shape[1]), dtype=np.float64)
    np.add.at(out, index, a.data)
    return _emit("scatter_rows", out, (a,), lambda g: (g[index],))


def take_along(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row column selection: ``out[i, j] = a[i, idx[i, j]]``."""
    index = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2 or index.ndim != 2 or index.shape[0] != a.shape[0]:
        raise DimensionError(f"take_along: shapes {a.shape} and {index.shape} do not conform")
    rows = np.arange(a.shape[0])[:, None]
    src = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(src, dtype=np.float64)
        np.add.at(grad, (np.broadcast_to(rows, index.shape), index), g)
        return (grad,)

    return _emit("take_along", a.data[rows, index], (a,), backward)


def scale_rows(a: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of a matrix by scalar ``w[i]``."""
    if a.ndim != 2 or w.shape != (a.shape[0],):
        raise DimensionError(f"scale_rows: shapes {a.shape} and {w.shape} do not conform")
    ad, wd = a.data, w.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g * wd[:, None], (g * ad).sum(axis=1)

    return _emit("scale_rows", ad * wd[:, None], (a, w), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: trailing shapes differ: {sorted(widths)}")
    bounds = np.cumsum([p.shape[0] for p in parts])[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, bounds, axis=0))

    return _emit("concat_rows", np.concatenate([p.data for p in parts]), tuple(parts), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_cols: nothing to concatenate")
    if len({p.shape[0] for p in parts}) != 1 or any(p.ndim != 2 for p in parts):
        raise DimensionError(f"concat_cols: shapes {[p.shape for p in parts]} do not conform")
    bounds = np.cumsum([p.shape[1] for p in parts])[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, bounds, axis=1))

    return _emit(
        "concat_cols", np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] invalid for shape {a.shape}")
    src = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(src, dtype=np.float64)
        grad[:, start:stop] = g
        return (grad,)

    return _emit("slice_cols", a.data[:, start:stop], (a,), backward)


# ---------------------------------------------------------------------------
# Regularization and losses
# ---------------------------------------------------------------------------


def dropout(a: Tensor, p: float, rng: SplitMix64 | None, training: bool) -> Tensor:
    """Inverted dropout; the identity outside training or when ``p == 0``."""
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ContractError("dropout in training mode needs a random stream")
    mask = (rng.uniform(a.shape) >= p).astype(np.float64) / (1.0 - p)
    return _emit("dropout", a.data * mask, (a,), lambda g: (g * mask,))


def cross_entropy(logits: Tensor, targets: Sequence[int] | np.ndarray) -> Tensor:
    """
    Mean negative log-likelihood of integer targets under row-softmax logits.

    Raises:
        DataError: If a target id is outside the vocabulary
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: expected (n, vocab) logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, vocab = logits.shape
    if t.size != n:
        raise DimensionError(f"cross_entropy: {t.size} targets for {n} logit rows")
    if n == 0:
        raise ContractError("cross_entropy: no positions to score")
    bad = np.flatnonzero((t < 0) | (t >= vocab))
    if bad.size:
        raise DataError(
            f"cross_entropy: target {int(t[bad[0]])} at position {int(bad[0])} "
            f"outside vocabulary of size {vocab}"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), t]
    probs = np.exp(shifted - lse[:, None])

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = probs.copy()
        grad[np.arange(n), t] -= 1.0
        return (grad * (float(g) / n),)

    return _emit("cross_entropy", np.asarray(nll.mean()), (logits,), backward)
