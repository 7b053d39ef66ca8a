"""
Toy visual encoder: patch embedding, PatchMerger and the MLP projector.

An H x W x C image becomes HW/p^2 patch tokens, every s x s neighbourhood of
which is fused into one token, and the fused tokens are projected to the model
width. The merged token count is HW / (p^2 * s^2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..base.config import ModelConfig
from ..exceptions import ConfigurationError, DimensionError
from ..numerics import functional as F
from ..numerics.rng import SplitMix64
from ..numerics.tensor import Tensor
from .layers import FeedForward, Linear, Module

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchGrid:
    """Visual tokens in row-major grid order with the grid dimensions."""

    tokens: Tensor
    rows: int
    cols: int

    @property
    def count(self) -> int:
        return self.rows * self.cols


def as_image(image: np.ndarray) -> np.ndarray:
    """Coerce an (H, W) or (H, W, C) array to float64 (H, W, C)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected an H x W x C image, got shape {arr.shape}")
    return arr


def extract_patches(image: np.ndarray, patch: int) -> tuple[np.ndarray, int, int]:
    """
    Flatten non-overlapping patch x patch tiles in row-major tile order.

    Returns:
        (tiles of shape (M0, patch * patch * C), grid rows, grid cols)

    Raises:
        ConfigurationError: If H or W is not divisible by ``patch``
    """
    img = as_image(image)
    h, w, c = img.shape
    if patch < 1 or h % patch or w % patch:
        raise ConfigurationError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    tiles = img.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, patch * patch * c), gh, gw


def patch_embed(
    image: np.ndarray,
    patch: int,
    proj: Linear,
    training: bool = False,
    rng: SplitMix64 | None = None,
) -> PatchGrid:
    """Linear projection of each flattened patch."""
    tiles, gh, gw = extract_patches(image, patch)
    return PatchGrid(tokens=proj(Tensor(tiles), training, rng), rows=gh, cols=gw)


def merge_index(rows: int, cols: int, side: int) -> np.ndarray:
    """Row order that lays every side x side neighbourhood out consecutively."""
    if rows % side or cols % side:
        raise ConfigurationError(
            f"patch grid {rows}x{cols} cannot be merged in {side}x{side} neighbourhoods"
        )
    r = np.arange(rows).reshape(rows // side, side)
    c = np.arange(cols).reshape(cols // side, side)
    # (out_row, out_col, dr, dc) -> flat source index
    idx = r[:, None, :, None] * cols + c[None, :, None, :]
    return idx.reshape(-1)


def patch_merge(grid: PatchGrid, side: int, proj: Linear) -> PatchGrid:
    """
    Fuse every side x side neighbourhood into one token.

    Raises:
        ConfigurationError: If a grid dimension is not divisible by ``side``
    """
    idx = merge_index(grid.rows, grid.cols, side)
    width = grid.tokens.shape[1]
    fused = (grid.count // (side * side), side * side * width)
    stacked = F.reshape(F.gather_rows(grid.tokens, idx), fused)
    return PatchGrid(tokens=proj(stacked), rows=grid.rows // side, cols=grid.cols // side)


def project_visual(
    v: Tensor,
    projector: FeedForward,
    training: bool = False,
    rng: SplitMix64 | None = None,
) -> Tensor:
    """Two-layer MLP from the merger width to the model width."""
    return projector(v, training, rng)


class VisionEncoder(Module):
    """Trainable patch embedder, PatchMerger and projector."""

    def __init__(self, prefix: str, config: ModelConfig, rng: SplitMix64):
        super().__init__(prefix)
        self.config = config
        c = config
        patch_dim = c.patch_size * c.patch_size * c.channels
        self.patch = self.add_module(
            "patch", Linear(self.sub("patch"), patch_dim, c.vision_width, rng, c.init_std)
        )
        self.merge = self.add_module(
            "merge",
            Linear(
                self.sub("merge"), c.merge_rate * c.vision_width, c.merger_width, rng, c.init_std
            ),
        )
        self.proj = self.add_module(
            "proj",
            FeedForward(
                self.sub("proj"), c.merger_width, c.projector_hidden, c.d_model, rng, c.init_std
            ),
        )

    def __call__(
        self, image: np.ndarray, training: bool = False, rng: SplitMix64 | None = None
    ) -> Tensor:
        img = as_image(image)
        c = self.config
        if img.shape != (c.image_size, c.image_size, c.channels):
            raise DimensionError(
                f"expected a {c.image_size}x{c.image_size}x{c.channels} image, got {img.shape}"
            )
        patch_rng = rng.fork("patch") if rng else None
        grid = patch_embed(img, c.patch_size, self.patch, training, patch_rng)
        merged = patch_merge(grid, c.merge_side, self.merge)
        return project_visual(merged.tokens, self.proj, training, rng.fork("proj") if rng else None)
