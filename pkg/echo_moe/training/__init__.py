"""
Stage-aware training: freeze masks, learning-rate schedule, AdamW and the loop.
"""

from .freeze import apply_freeze, count_parameters, freeze_mask, namespace_of
from .optim import OptimState, adamw_step
from .schedule import lr_at, warmup_steps
from .trainer import TrainResult, train_loop, train_step

__all__ = [
    "namespace_of",
    "freeze_mask",
    "apply_freeze",
    "count_parameters",
    "lr_at",
    "warmup_steps",
    "OptimState",
    "adamw_step",
    "train_loop",
    "train_step",
    "TrainResult",
]
