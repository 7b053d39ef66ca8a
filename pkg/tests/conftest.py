"""Test configuration for pytest."""

import shutil
import tempfile
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from echo_moe.base.config import DataConfig, LoraConfig, ModelConfig, RunConfig
from echo_moe.numerics.rng import SplitMix64


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for artifacts."""
    path = Path(tempfile.mkdtemp())

    yield path

    # Cleanup
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def rng() -> SplitMix64:
    """Seeded random stream."""
    return SplitMix64(1234, "tests")


@pytest.fixture
def tiny_config() -> ModelConfig:
    """A model small enough for exhaustive checks: one visual token per image."""
    return ModelConfig(
        d_model=16,
        n_layers=2,
        n_heads=2,
        ffn_hidden=16,
        max_len=48,
        image_size=28,
        patch_size=14,
        merge_rate=4,
        vision_width=8,
        merger_width=16,
        projector_hidden=16,
        num_experts=4,
        top_k=2,
        expert_hidden=8,
    )


@pytest.fixture
def grad_config() -> ModelConfig:
    """Two-block model over a 32-token vocabulary with weights large enough to check gradients."""
    return ModelConfig(
        d_model=16,
        n_layers=2,
        n_heads=2,
        vocab_size=32,
        bos_id=29,
        sep_id=30,
        eos_id=31,
        ffn_hidden=16,
        max_len=16,
        image_size=28,
        patch_size=14,
        merge_rate=4,
        vision_width=8,
        merger_width=8,
        projector_hidden=8,
        num_experts=4,
        top_k=2,
        expert_hidden=8,
        init_std=0.3,
    )


@pytest.fixture
def tiny_lora() -> LoraConfig:
    """Rank-2 adapters without dropout."""
    return LoraConfig(rank=2, alpha=4.0, dropout=0.0)


@pytest.fixture
def run_config(tiny_config: ModelConfig, tiny_lora: LoraConfig, temp_dir: Path) -> RunConfig:
    """Run configuration pointing every artifact into the temp directory."""
    return RunConfig(
        seed=7,
        output_dir=temp_dir / "runs",
        model=tiny_config,
        lora=tiny_lora,
        data=DataConfig(corpus_dir=temp_dir / "corpus", count=6, instruction_count=20),
    )


@pytest.fixture
def random_image(tiny_config: ModelConfig, rng: SplitMix64) -> np.ndarray:
    """A random image matching the tiny model."""
    side = tiny_config.image_size
    return rng.fork("image").uniform((side, side, tiny_config.channels))
