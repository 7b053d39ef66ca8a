"""
echo-moe: a desk-scale Dual-path mixture-of-experts multimodal transformer.

Pure-numpy reverse-mode numerics, a vision-conditioned transformer whose blocks
mix a frozen static FFN with shared and top-k routed experts, LoRA adapters,
stage-isolated training, and the instruction-data pipeline and metrics around it.
"""

import importlib.metadata

from .base import (
    CONFIG_CLASSES,
    BaseInstructionGenerator,
    DataConfig,
    DedupConfig,
    LoraConfig,
    MetricsConfig,
    ModelConfig,
    RunConfig,
    Stage,
    TrainPlan,
)
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    EchoMoEError,
    GeneratorNotFoundError,
    InvariantError,
    SerializationError,
    TrainingError,
)
from .factory import (
    InstructionGeneratorFactory,
    create_config,
    create_generator,
    create_run_config_from_env,
    factory,
    list_generators,
    load_run_config,
    register_generator,
)
from .model import MultimodalTransformer, SequenceInput, greedy_decode
from .training import train_loop

# Version handling with fallback
try:
    __version__ = importlib.metadata.version("echo-moe")
except importlib.metadata.PackageNotFoundError:
    __version__ = "0.1.0"  # Fallback version

__all__ = [
    # Configuration classes
    "ModelConfig",
    "LoraConfig",
    "TrainPlan",
    "DedupConfig",
    "MetricsConfig",
    "DataConfig",
    "RunConfig",
    "Stage",
    "CONFIG_CLASSES",
    # Core classes
    "MultimodalTransformer",
    "SequenceInput",
    "greedy_decode",
    "train_loop",
    "BaseInstructionGenerator",
    # Factory
    "InstructionGeneratorFactory",
    "factory",
    "register_generator",
    "create_generator",
    "create_config",
    "list_generators",
    "create_run_config_from_env",
    "load_run_config",
    # Exception classes
    "EchoMoEError",
    "ConfigurationError",
    "DimensionError",
    "DataError",
    "ContractError",
    "TrainingError",
    "CheckpointError",
    "InvariantError",
    "SerializationError",
    "GeneratorNotFoundError",
    # Version
    "__version__",
]
