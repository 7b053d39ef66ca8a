"""
Tests for the toy visual encoder.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from echo_moe.base.config import ModelConfig
from echo_moe.exceptions import ConfigurationError, DimensionError
from echo_moe.model.layers import FeedForward, Linear
from echo_moe.model.vision import (
    PatchGrid,
    VisionEncoder,
    extract_patches,
    merge_index,
    patch_embed,
    patch_merge,
    project_visual,
)
from echo_moe.numerics.rng import SplitMix64
from echo_moe.numerics.tensor import Tensor


class TestPatchEmbed:
    """Test patch extraction and embedding."""

    def test_small_grid(self):
        """28 x 28 with patch 14 gives a 2 x 2 grid."""
        tiles, gh, gw = extract_patches(np.zeros((28, 28)), 14)

        assert tiles.shape == (4, 196)
        assert (gh, gw) == (2, 2)

    def test_full_resolution(self):
        """392 x 392 with patch 14 gives 784 tokens."""
        tiles, gh, gw = extract_patches(np.zeros((392, 392, 3)), 14)

        assert tiles.shape == (784, 14 * 14 * 3)
        assert (gh, gw) == (28, 28)

    def test_row_major_order(self):
        """Tiles follow row-major order over the grid."""
        image = np.zeros((4, 6))
        for r in range(2):
            for c in range(3):
                image[2 * r : 2 * r + 2, 2 * c : 2 * c + 2] = 3 * r + c
        tiles, _, _ = extract_patches(image, 2)

        assert_array_equal(tiles[:, 0], np.arange(6.0))
        assert np.all(tiles == tiles[:, :1])

    def test_not_divisible(self):
        """No padding: the side must divide."""
        with pytest.raises(ConfigurationError):
            extract_patches(np.zeros((30, 28)), 14)

    def test_bad_rank(self):
        """A 1-d array is not an image."""
        with pytest.raises(DimensionError):
            extract_patches(np.zeros(28), 14)

    def test_zero_image(self, rng):
        """Zero pixels and zero bias give zero tokens."""
        proj = Linear("patch", 196, 8, rng, 0.5)
        grid = patch_embed(np.zeros((28, 28)), 14, proj)

        assert_array_equal(grid.tokens.data, np.zeros((4, 8)))
        assert grid.count == 4


class TestPatchMerge:
    """Test the PatchMerger."""

    def test_merge_index(self):
        """Each 2 x 2 neighbourhood is laid out consecutively."""
        expected = [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]
        assert merge_index(4, 4, 2).tolist() == expected

    def test_odd_grid(self):
        """An odd grid dimension cannot be merged."""
        with pytest.raises(ConfigurationError):
            merge_index(3, 2, 2)

    def test_full_resolution_count(self, rng):
        """784 tokens on a 28 x 28 grid merge into 196."""
        grid = PatchGrid(tokens=Tensor(rng.normal((784, 2))), rows=28, cols=28)
        merged = patch_merge(grid, 2, Linear("merge", 8, 3, rng))

        assert merged.tokens.shape == (196, 3)
        assert (merged.rows, merged.cols) == (14, 14)

    def test_single_neighbourhood(self, rng):
        """Four tokens fuse into one projected concatenation."""
        tokens = rng.normal((4, 2))
        proj = Linear("merge", 8, 3, rng)
        merged = patch_merge(PatchGrid(tokens=Tensor(tokens), rows=2, cols=2), 2, proj)

        expected = tokens.reshape(1, 8) @ proj.weight.data.T
        assert_allclose(merged.tokens.data, expected, atol=1e-12)

    def test_identical_tokens(self, rng):
        """Identical inputs merge into identical outputs."""
        grid = PatchGrid(tokens=Tensor(np.tile([0.3, -1.0], (16, 1))), rows=4, cols=4)
        out = patch_merge(grid, 2, Linear("merge", 8, 3, rng)).tokens.data

        assert np.all(out == out[0])


class TestProjector:
    """Test the visual projector."""

    def test_zero_input(self, rng):
        """Zero tokens and zero biases project to zero."""
        proj = FeedForward("proj", 4, 6, 5, rng, 0.5)
        assert_array_equal(project_visual(Tensor(np.zeros((3, 4))), proj).data, np.zeros((3, 5)))

    def test_hand_computed(self, rng):
        """Identity first layer, fixed second layer, no bypass."""
        proj = FeedForward("proj", 3, 3, 3, rng)
        proj.fc1.weight.assign(np.eye(3))
        W2 = np.array([[1.0, 0.0, 2.0], [0.0, -1.0, 0.0], [0.5, 0.5, 0.5]])
        proj.fc2.weight.assign(W2)
        x = np.array([1.0, -1.0, 2.0])
        silu = x / (1.0 + np.exp(-x))

        out = project_visual(Tensor(x[None, :]), proj).data
        assert_allclose(out[0], W2 @ silu, atol=1e-12)

    def test_output_width(self, rng):
        """Output width is the model width for any token count."""
        proj = FeedForward("proj", 4, 6, 16, rng)
        for n in (1, 3, 9):
            assert project_visual(Tensor(np.ones((n, 4))), proj).shape == (n, 16)


class TestVisionEncoder:
    """Test the assembled encoder."""

    def test_token_count_identity(self):
        """392 x 392, patch 14, merge 4 gives 196 visual tokens."""
        config = ModelConfig(
            image_size=392,
            patch_size=14,
            merge_rate=4,
            max_len=256,
            vision_width=4,
            merger_width=8,
            projector_hidden=8,
            d_model=8,
            n_heads=2,
        )
        encoder = VisionEncoder("vision", config, SplitMix64(0))
        image = SplitMix64(1).uniform((392, 392, 1))

        assert config.visual_tokens == 196
        assert encoder(image).shape == (196, 8)

    def test_wrong_image_shape(self, tiny_config):
        """Images must match the configured geometry."""
        encoder = VisionEncoder("vision", tiny_config, SplitMix64(0))
        with pytest.raises(DimensionError):
            encoder(np.zeros((56, 56, 1)))

    def test_grayscale_2d_input(self, tiny_config, random_image):
        """An H x W array is read as one channel."""
        encoder = VisionEncoder("vision", tiny_config, SplitMix64(0))
        assert_array_equal(encoder(random_image[:, :, 0]).data, encoder(random_image).data)

    def test_config_rejects_indivisible_geometry(self):
        """The model configuration validates the image geometry up front."""
        with pytest.raises(ValueError):
            ModelConfig(image_size=42, patch_size=14, merge_rate=4)
