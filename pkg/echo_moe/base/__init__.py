"""
Base classes and configuration models for echo-moe.
"""

from .base_generator import BaseInstructionGenerator
from .config import (
    ANATOMICAL_TAGS,
    BOS_ID,
    CONFIG_CLASSES,
    DEFAULT_VOCAB,
    EOS_ID,
    LORA_SITES,
    SEP_ID,
    DataConfig,
    DedupConfig,
    EchoConfig,
    LoraConfig,
    MetricsConfig,
    ModelConfig,
    RunConfig,
    Stage,
    TrainPlan,
)

__all__ = [
    "BaseInstructionGenerator",
    "EchoConfig",
    "ModelConfig",
    "LoraConfig",
    "TrainPlan",
    "DedupConfig",
    "MetricsConfig",
    "DataConfig",
    "RunConfig",
    "Stage",
    "CONFIG_CLASSES",
    "ANATOMICAL_TAGS",
    "LORA_SITES",
    "BOS_ID",
    "SEP_ID",
    "EOS_ID",
    "DEFAULT_VOCAB",
]
