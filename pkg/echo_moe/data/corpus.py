"""
Loading synthetic corpora and assembling model sequences.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from ..base.config import ModelConfig
from ..exceptions import DataError, SerializationError
from ..model.transformer import SequenceInput
from .imageio import read_images
from .synth import CAPTIONS_FILE, CORPUS_FORMAT, IMAGES_FILE, MANIFEST_FILE, CaptionSample
from .tokenizer import ByteTokenizer

logger = logging.getLogger(__name__)


def read_manifest(directory: str | Path) -> dict:
    """
    Read and check a corpus manifest.

    Raises:
        DataError: If the manifest is missing, unreadable or of another format
    """
    path = Path(directory) / MANIFEST_FILE
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"no corpus manifest at {path}") from e
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"unreadable corpus manifest {path}: {e}") from e
    if manifest.get("format") != CORPUS_FORMAT:
        raise DataError(f"{path} is not an {CORPUS_FORMAT} manifest")
    return manifest


def load_captions(directory: str | Path) -> list[CaptionSample]:
    """
    Load the caption corpus written by :func:`~echo_moe.data.synth.write_corpus`.

    Raises:
        DataError: If files are malformed or image and caption counts disagree
    """
    root = Path(directory)
    read_manifest(root)
    images = read_images(root / IMAGES_FILE)
    rows = []
    try:
        with open(root / CAPTIONS_FILE, "rb") as f:
            for lineno, raw in enumerate(f, start=1):
                try:
                    line = raw.decode("utf-8")
                    if line.strip():
                        rows.append(json.loads(line))
                except (UnicodeDecodeError, json.JSONDecodeError) as e:
                    raise DataError(f"{CAPTIONS_FILE}:{lineno}: {e}") from e
    except OSError as e:
        raise SerializationError(f"Failed to read captions from {root}: {e}") from e
    if len(rows) != len(images):
        raise DataError(f"{len(rows)} captions but {len(images)} images in {root}")
    samples = [
        CaptionSample(
            id=row["id"],
            image=image,
            caption=row["caption"],
            tag=row.get("tag", ""),
            features=row.get("features", {}),
            prompt=row.get("prompt", "describe"),
        )
        for row, image in zip(rows, images)
    ]
    logger.debug(f"Loaded {len(samples)} caption samples from {root}")
    return samples


def build_sequences(
    samples: Sequence[CaptionSample],
    config: ModelConfig,
    tokenizer: ByteTokenizer | None = None,
) -> list[SequenceInput]:
    """Image, prompt and caption of every sample as training sequences."""
    tok = tokenizer or ByteTokenizer(config.bos_id, config.sep_id, config.eos_id)
    return [
        SequenceInput(
            image=np.asarray(s.image, dtype=np.float64),
            prompt_ids=tok.prompt_ids(s.prompt),
            target_ids=tok.target_ids(s.caption),
            tag=s.tag,
        )
        for s in samples
    ]


def prompt_sequence(
    prompt: str,
    config: ModelConfig,
    image: np.ndarray | None = None,
    tokenizer: ByteTokenizer | None = None,
) -> SequenceInput:
    """
    A decoding prompt.

    Raises:
        DataError: If the prompt text is empty
    """
    if not prompt.strip():
        raise DataError("prompt text is empty")
    tok = tokenizer or ByteTokenizer(config.bos_id, config.sep_id, config.eos_id)
    return SequenceInput(image=image, prompt_ids=tok.prompt_ids(prompt))
