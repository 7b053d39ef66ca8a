"""
Finite-difference gradient oracle.

Every analytic gradient in echo-moe is checked against central differences
computed here.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from typing import Any

import numpy as np

from ..exceptions import ContractError
from .rng import SplitMix64
from .tensor import GradTape, Parameter, Tensor, backward

logger = logging.getLogger(__name__)

ScalarFn = Callable[[Tensor], Any]


def _scalar(value: Any) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def finite_diff_grad(
    f: ScalarFn,
    x: Tensor | np.ndarray,
    eps: float = 1e-5,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    Args:
        f: Deterministic scalar function of a tensor
        x: Point to differentiate at
        eps: Step size, within [1e-7, 1e-3]
        indices: Optional flat coordinate indices to perturb; others stay zero

    Returns:
        Array shaped like ``x`` holding (f(x + eps e_i) - f(x - eps e_i)) / 2 eps
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"finite_diff_grad: eps {eps} outside [1e-7, 1e-3]")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    coords = range(flat.size) if indices is None else np.asarray(indices).reshape(-1)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = _scalar(f(Tensor(base.copy())))
        flat[i] = orig - eps
        f_minus = _scalar(f(Tensor(base.copy())))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max absolute difference scaled by the larger of the two max magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)), floor)
    return float(np.abs(a - n).max(initial=0.0)) / scale


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Parameter],
    eps: float = 1e-5,
    max_coords: int | None = 8,
    seed: int = 0,
) -> dict[str, float]:
    """
    Compare backward() against central differences for every trainable parameter.

    Args:
        loss_fn: Zero-argument closure recomputing the scalar loss from the
            current parameter values
        params: Parameters to check; frozen ones are skipped
        eps: Finite-difference step
        max_coords: Coordinates sampled per parameter (None checks all)
        seed: Seed for coordinate sampling

    Returns:
        Mapping from parameter name to relative error on the sampled coordinates
    """
    with GradTape() as tape:
        loss = loss_fn()
    analytic = backward(tape, loss, params.values())

    rng = SplitMix64(seed, "gradcheck")
    errors: dict[str, float] = {}
    for name, param in params.items():
        if param.frozen:
            continue
        original = param.numpy()
        if max_coords is None or param.size <= max_coords:
            coords = np.arange(param.size)
        else:
            coords = np.sort(rng.fork(name).choice(param.size, max_coords))

        def loss_at(value: Tensor, p: Parameter = param) -> float:
            p.assign(value.data)
            return loss_fn().item()

        try:
            numeric = finite_diff_grad(loss_at, original, eps=eps, indices=coords)
        finally:
            param.assign(original)
        errors[name] = relative_error(
            analytic[name].reshape(-1)[coords], numeric.reshape(-1)[coords]
        )
    worst = max(errors.items(), key=lambda kv: kv[1], default=("-", 0.0))
    logger.debug(f"gradient check over {len(errors)} parameters, worst {worst[0]}={worst[1]:.2e}")
    return errors
