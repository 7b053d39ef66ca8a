"""
Raw image stacks.

A file holds a 16-byte header of four little-endian uint32 values (magic, H,
W, C) followed by any number of H x W x C images as little-endian float32,
row-major. An empty stack is just the header.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from ..exceptions import DataError, SerializationError

logger = logging.getLogger(__name__)

MAGIC = 0x4D494345  # "ECIM" read as little-endian uint32
HEADER = struct.Struct("<4I")


def encode_images(images: np.ndarray) -> bytes:
    """Header plus pixels for a stack of shape (N, H, W, C)."""
    stack = np.asarray(images)
    if stack.ndim != 4:
        raise DataError(f"expected an (N, H, W, C) stack, got shape {stack.shape}")
    _, h, w, c = stack.shape
    return HEADER.pack(MAGIC, h, w, c) + stack.astype("<f4").tobytes(order="C")


def decode_images(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """
    Parse an image stack.

    Returns:
        float64 array of shape (N, H, W, C)

    Raises:
        DataError: If the header is missing or wrong, or the payload is truncated
    """
    if len(data) < HEADER.size:
        raise DataError(f"{source}: image file shorter than its header")
    magic, h, w, c = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"{source}: bad image magic {magic:#010x}")
    frame = h * w * c * 4
    payload = len(data) - HEADER.size
    if frame == 0 or payload % frame:
        raise DataError(f"{source}: payload of {payload} bytes is not a whole number of images")
    pixels = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    return pixels.reshape(payload // frame, h, w, c).astype(np.float64)


def write_images(path: str | Path, images: np.ndarray) -> Path:
    """Write an image stack."""
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(encode_images(images))
    except OSError as e:
        raise SerializationError(f"Failed to write images to {out}: {e}") from e
    return out


def read_images(path: str | Path) -> np.ndarray:
    """Read an image stack as float64 (N, H, W, C)."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise SerializationError(f"Failed to read images from {path}: {e}") from e
    return decode_images(data, str(path))
