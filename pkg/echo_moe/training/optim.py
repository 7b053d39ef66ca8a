"""
AdamW with decoupled weight decay.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ContractError, TrainingError
from ..numerics.tensor import Parameter

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    """First/second moment accumulators for trainable parameters only."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, Parameter],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """
    One bias-corrected AdamW update, in place.

    Gradients are validated before any parameter moves, so a failed step leaves
    every parameter and the optimizer state untouched.

    Raises:
        ContractError: If a gradient targets a frozen or unknown parameter
        TrainingError: If a gradient contains NaN or infinity
    """
    for name, g in grads.items():
        param = params.get(name)
        if param is None:
            raise ContractError(f"gradient for unknown parameter {name}")
        if param.frozen:
            raise ContractError(f"gradient supplied for frozen parameter {name}")
        if g.shape != param.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {param.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}; step aborted")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, g in grads.items():
        param = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        value = param.data
        if weight_decay:
            value = value - lr * weight_decay * value
        param.assign(value - lr * m_hat / (np.sqrt(v_hat) + state.eps))
