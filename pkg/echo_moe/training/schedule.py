"""Learning-rate schedule: linear warmup, then cosine decay to zero."""

from __future__ import annotations

import math

from ..base.config import TrainPlan
from ..exceptions import ContractError


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    """ceil(warmup_ratio * total_steps), robust to binary rounding of the product."""
    return math.ceil(round(warmup_ratio * total_steps, 9))


def lr_at(step: float, plan: TrainPlan, total_steps: int | None = None) -> float:
    """
    Learning rate after ``step`` of ``total_steps`` steps.

    Ramps linearly from 0 to the peak over the warmup steps, then follows a
    half cosine from the peak down to 0 at ``total_steps``.

    Args:
        step: Step position, may be fractional
        plan: Supplies the peak rate and warmup ratio
        total_steps: Overrides ``plan.total_steps``

    Raises:
        ContractError: If the step budget is unknown or ``step`` is out of range
    """
    total = total_steps if total_steps is not None else plan.total_steps
    if total is None or total < 1:
        raise ContractError("lr_at needs a positive total step count")
    if not 0 <= step <= total:
        raise ContractError(f"step {step} outside [0, {total}]")
    peak = plan.peak_lr
    warmup = warmup_steps(total, plan.warmup_ratio)
    if step < warmup:
        return peak * step / warmup
    if total == warmup:
        return peak if step < total else 0.0
    progress = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))
