"""
Configuration models for echo-moe.

Uses Pydantic for validation and type safety. Every model forbids unknown keys so
a typo in a JSON run config fails loudly instead of silently using a default.
"""

from __future__ import annotations

import math
from enum import Enum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Byte-level vocabulary: 256 byte values followed by the special tokens.
BYTE_VOCAB = 256
BOS_ID = 256
SEP_ID = 257
EOS_ID = 258
DEFAULT_VOCAB = 259

ANATOMICAL_TAGS = (
    "breast",
    "gynecology",
    "heart",
    "kidney",
    "liver",
    "thyroid",
    "vascular",
)

LORA_SITES = ("attn.q", "attn.k", "attn.v", "attn.o", "vision.proj", "vision.patch")


class Stage(str, Enum):
    """Training stage selector."""

    BASE = "base"
    STAGE_I = "I"
    STAGE_II = "II"


class EchoConfig(BaseModel):
    """Base class for all echo-moe configuration models."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ModelConfig(EchoConfig):
    """Shape of the multimodal transformer and its Dual-path MoE blocks."""

    d_model: int = Field(default=32, ge=1, description="Model width D")
    n_layers: int = Field(default=2, ge=1, description="Transformer block count L")
    n_heads: int = Field(default=4, ge=1, description="Attention head count")
    vocab_size: int = Field(default=DEFAULT_VOCAB, ge=2, description="Vocabulary size")
    max_len: int = Field(default=128, ge=1, description="Maximum sequence length")
    ffn_hidden: int = Field(default=64, ge=1, description="Hidden width of the base (static) FFN")
    ln_eps: float = Field(default=1e-5, gt=0, description="Layer-norm epsilon")
    init_std: float = Field(default=0.02, gt=0, description="Std of Gaussian weight init")

    # Vision path
    image_size: int = Field(default=28, ge=1, description="Square image side in pixels")
    channels: int = Field(default=1, ge=1, description="Image channel count C")
    patch_size: int = Field(default=14, ge=1, description="Patch side length")
    merge_rate: int = Field(default=4, ge=1, description="PatchMerger rate (tokens fused)")
    vision_width: int = Field(default=16, ge=1, description="Patch embedding width")
    merger_width: int = Field(default=32, ge=1, description="Width after PatchMerger")
    projector_hidden: int = Field(default=32, ge=1, description="Projector MLP hidden width")

    # Dual-path MoE
    num_experts: int = Field(default=4, ge=1, description="Routing expert count E")
    top_k: int = Field(default=2, ge=1, description="Experts selected per token k")
    expert_hidden: int = Field(default=16, ge=1, description="Routing expert hidden width")
    shared_hidden: int | None = Field(
        default=None, ge=1, description="Shared expert hidden width (default 4x expert width)"
    )
    use_shared_expert: bool = Field(default=True, description="Enable the shared expert path")

    bos_id: int = Field(default=BOS_ID, description="Begin-of-prompt token id")
    sep_id: int = Field(default=SEP_ID, description="Prompt/response separator token id")
    eos_id: int = Field(default=EOS_ID, description="End-of-response token id")

    @model_validator(mode="after")
    def validate_geometry(self) -> ModelConfig:
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        side = math.isqrt(self.merge_rate)
        if side * side != self.merge_rate:
            raise ValueError(f"merge_rate must be a perfect square, got {self.merge_rate}")
        if self.image_size % (self.patch_size * side) != 0:
            raise ValueError(
                f"image_size ({self.image_size}) must be divisible by "
                f"patch_size * sqrt(merge_rate) ({self.patch_size * side})"
            )
        if self.top_k > self.num_experts:
            raise ValueError(
                f"top_k ({self.top_k}) must not exceed num_experts ({self.num_experts})"
            )
        for name in ("bos_id", "sep_id", "eos_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise ValueError(f"{name} must lie inside the vocabulary")
        if self.visual_tokens >= self.max_len:
            raise ValueError(
                f"max_len ({self.max_len}) leaves no room for text after "
                f"{self.visual_tokens} visual tokens"
            )
        return self

    @property
    def merge_side(self) -> int:
        return math.isqrt(self.merge_rate)

    @property
    def shared_width(self) -> int:
        return self.shared_hidden if self.shared_hidden is not None else 4 * self.expert_hidden

    @property
    def visual_tokens(self) -> int:
        """M = HW / (patch^2 * merge)."""
        return self.image_size * self.image_size // (self.patch_size**2 * self.merge_rate)


class LoraConfig(EchoConfig):
    """Low-rank adapter settings for Stage II."""

    rank: int = Field(default=8, ge=1, description="Adapter rank r")
    alpha: float = Field(default=16.0, gt=0, description="Scale numerator; s = alpha / r")
    dropout: float = Field(default=0.05, ge=0.0, lt=1.0, description="Adapter input dropout")
    init_std: float = Field(default=0.02, gt=0, description="Std of the A factor init")
    sites: list[str] = Field(default_factory=lambda: list(LORA_SITES), description="Adapter sites")

    @field_validator("sites")
    @classmethod
    def validate_sites(cls, v: list[str]) -> list[str]:
        unknown = sorted(set(v) - set(LORA_SITES))
        if unknown:
            raise ValueError(f"unknown LoRA sites {unknown}; valid sites are {list(LORA_SITES)}")
        return v

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


_STAGE_LR = {Stage.BASE: 1e-3, Stage.STAGE_I: 1e-3, Stage.STAGE_II: 2e-5}


class TrainPlan(EchoConfig):
    """Optimization plan for one training stage."""

    stage: Stage = Field(default=Stage.STAGE_I, description="Training stage")
    lr_peak: float | None = Field(default=None, ge=0, description="Peak learning rate")
    warmup_ratio: float = Field(default=0.03, ge=0.0, le=1.0, description="Warmup fraction")
    epochs: int = Field(default=1, ge=1, description="Passes over the corpus")
    total_steps: int | None = Field(
        default=None, ge=1, description="Step budget (default epochs x batches per epoch)"
    )
    batch_size: int = Field(default=1, ge=1, description="Sequences per optimization step")
    weight_decay: float = Field(default=0.0, ge=0.0, description="Decoupled weight decay")
    gamma: float = Field(default=0.001, ge=0.0, description="Balance loss weight")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0, description="AdamW first-moment decay")
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0, description="AdamW second-moment decay")
    adam_eps: float = Field(default=1e-8, gt=0, description="AdamW denominator epsilon")
    seed: int = Field(default=0, description="Seed for shuffling and dropout")
    log_every: int = Field(default=1, ge=1, description="Metrics log cadence in steps")

    @model_validator(mode="after")
    def fill_stage_defaults(self) -> TrainPlan:
        if self.lr_peak is None:
            # validate_assignment would recurse into this validator
            object.__setattr__(self, "lr_peak", _STAGE_LR[self.stage])
        return self

    @property
    def peak_lr(self) -> float:
        return float(self.lr_peak if self.lr_peak is not None else _STAGE_LR[self.stage])


class DedupConfig(EchoConfig):
    """Thresholds of the two deduplication gates."""

    rouge_threshold: float = Field(default=0.7, ge=0.0, le=1.0, description="Reject above")
    hamming_threshold: int = Field(default=3, ge=0, le=64, description="Reject at or below")


class MetricsConfig(EchoConfig):
    """Evaluation settings."""

    tokenization: Literal["word", "char"] = Field(default="word", description="Token unit")
    scale: float = Field(default=100.0, gt=0, description="Report scaling factor")


class DataConfig(EchoConfig):
    """Corpus locations and synthetic generation knobs."""

    corpus_dir: Path = Field(default=Path("corpus"), description="Synthetic corpus directory")
    count: int = Field(default=50, ge=0, description="Synthetic caption pairs")
    instruction_count: int = Field(default=100, ge=0, description="Synthetic instruction records")
    duplicate_rate: float = Field(default=0.1, ge=0.0, lt=1.0, description="Planted duplicates")
    prompt: str = Field(default="describe", description="Prompt text for caption pairs")


class RunConfig(EchoConfig):
    """Everything one CLI invocation needs; echoed into every artifact."""

    seed: int = Field(default=0, description="Root seed")
    output_dir: Path = Field(default=Path("runs"), description="Artifact directory")
    debug: bool = Field(default=False, description="Enable debug logging")
    model: ModelConfig = Field(default_factory=ModelConfig)
    lora: LoraConfig = Field(default_factory=LoraConfig)
    train: TrainPlan = Field(default_factory=TrainPlan)
    dedup: DedupConfig = Field(default_factory=DedupConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    def echo(self) -> dict:
        """JSON-compatible dump used for config echo in artifacts."""
        return self.model_dump(mode="json")


CONFIG_CLASSES = {
    "model": ModelConfig,
    "lora": LoraConfig,
    "train": TrainPlan,
    "dedup": DedupConfig,
    "metrics": MetricsConfig,
    "data": DataConfig,
    "run": RunConfig,
}
