"""
The multimodal transformer: layers, Dual-path MoE, LoRA, vision path and checkpoints.
"""

from .checkpoint import (
    Checkpoint,
    build_model,
    load_checkpoint,
    parameter_digest,
    restore_parameters,
    save_checkpoint,
)
from .layers import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .lora import LoraAdapter, create_adapter, lora_apply, lora_merge, lora_parameter_count
from .moe import (
    DispatchStats,
    DualPathMoEParams,
    RoutingDecision,
    balance_loss,
    dispatch_stats,
    moe_forward,
    moe_layer,
    route_topk,
)
from .transformer import (
    ForwardOutput,
    MultimodalTransformer,
    SequenceInput,
    TransformerBlock,
    ar_loss,
    block_forward,
    embed_text,
    greedy_decode,
    total_loss,
    validate_sequence,
)
from .vision import (
    PatchGrid,
    VisionEncoder,
    extract_patches,
    patch_embed,
    patch_merge,
    project_visual,
)

__all__ = [
    "Module",
    "Linear",
    "LayerNorm",
    "FeedForward",
    "MultiHeadAttention",
    "LoraAdapter",
    "create_adapter",
    "lora_apply",
    "lora_merge",
    "lora_parameter_count",
    "DualPathMoEParams",
    "RoutingDecision",
    "DispatchStats",
    "route_topk",
    "moe_layer",
    "moe_forward",
    "dispatch_stats",
    "balance_loss",
    "PatchGrid",
    "VisionEncoder",
    "extract_patches",
    "patch_embed",
    "patch_merge",
    "project_visual",
    "SequenceInput",
    "ForwardOutput",
    "TransformerBlock",
    "MultimodalTransformer",
    "embed_text",
    "block_forward",
    "ar_loss",
    "total_loss",
    "greedy_decode",
    "validate_sequence",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_parameters",
    "build_model",
    "parameter_digest",
]
