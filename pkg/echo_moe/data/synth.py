"""
Synthetic corpora.

Caption corpus: each image carries one disc-shaped nodule whose quadrant, size
and brightness are drawn from the seed; the caption is a fixed function of
those three features, so a small model can learn it exactly.

Instruction corpus: records of pseudo-clinical words with a planted fraction
of near-duplicates, recorded in a truth sidecar for checking deduplication.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..base.config import ANATOMICAL_TAGS, DataConfig, ModelConfig
from ..exceptions import SerializationError
from ..numerics.rng import SplitMix64
from ..textpipe.records import InstructionRecord, TemplateClass, write_jsonl, write_records
from .imageio import write_images

logger = logging.getLogger(__name__)

CORPUS_FORMAT = "echo-moe-corpus"
MANIFEST_FILE = "manifest.json"
IMAGES_FILE = "images.bin"
CAPTIONS_FILE = "captions.jsonl"
INSTRUCTIONS_FILE = "instructions.jsonl"
GENERATED_FILE = "generated.jsonl"
TRUTH_FILE = "duplicates.json"

QUADRANTS = ("upper left", "upper right", "lower left", "lower right")
SIZES = ("small", "large")
ECHOES = ("hyperechoic", "hypoechoic")

# Nodule intensity per echo level and radius as a fraction of the image side.
_INTENSITY = {"hyperechoic": 1.0, "hypoechoic": 0.45}
_RADIUS = {"small": 0.09, "large": 0.2}
_NOISE = 0.05

_SYLLABLES = (
    "ab", "ca", "de", "fi", "go", "hy", "li", "mo", "na", "or",
    "pe", "qui", "ro", "sa", "te", "ul", "va", "xe", "zo", "mi",
)  # fmt: skip


@dataclass
class CaptionSample:
    """One synthetic image with its caption."""

    id: str
    image: np.ndarray
    caption: str
    tag: str
    features: dict[str, str] = field(default_factory=dict)
    prompt: str = "describe"

    def to_row(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "caption": self.caption,
            "tag": self.tag,
            "features": self.features,
        }


def caption_for(quadrant: str, size: str, echo: str) -> str:
    """The caption planted for a feature combination."""
    return f"{echo} {size} nodule {quadrant}"


def render_nodule(
    config: ModelConfig, quadrant: str, size: str, echo: str, rng: SplitMix64
) -> np.ndarray:
    """Image of shape (H, W, C) holding one nodule over faint noise, float32-exact."""
    side = config.image_size
    row = 0.25 if quadrant.startswith("upper") else 0.75
    col = 0.25 if quadrant.endswith("left") else 0.75
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    inside = (yy - row * side) ** 2 + (xx - col * side) ** 2 <= (_RADIUS[size] * side) ** 2
    noise = rng.uniform((side, side, config.channels)) * _NOISE
    image = noise + inside[:, :, None] * _INTENSITY[echo]
    return image.astype(np.float32).astype(np.float64)


def synth_captions(
    seed: int, count: int, config: ModelConfig, prompt: str = "describe"
) -> list[CaptionSample]:
    """
    Generate ``count`` caption samples.

    Args:
        seed: Root seed
        count: Number of samples
        config: Supplies image side and channel count
        prompt: Prompt text shared by every sample
    """
    rng = SplitMix64(seed, "synth/captions")
    samples = []
    for i in range(count):
        quadrant = QUADRANTS[int(rng.integers(len(QUADRANTS), 1)[0])]
        size = SIZES[int(rng.integers(len(SIZES), 1)[0])]
        echo = ECHOES[int(rng.integers(len(ECHOES), 1)[0])]
        tag = ANATOMICAL_TAGS[int(rng.integers(len(ANATOMICAL_TAGS), 1)[0])]
        samples.append(
            CaptionSample(
                id=f"img-{i:05d}",
                image=render_nodule(config, quadrant, size, echo, rng.fork(i)),
                caption=caption_for(quadrant, size, echo),
                tag=tag,
                features={"quadrant": quadrant, "size": size, "echo": echo},
                prompt=prompt,
            )
        )
    return samples


def _words(rng: SplitMix64, n: int) -> list[str]:
    picks = rng.integers(len(_SYLLABLES), 3 * n).reshape(n, 3)
    return ["".join(_SYLLABLES[int(s)] for s in row) for row in picks]


def _near_duplicate(record: InstructionRecord, variant: int, rng: SplitMix64) -> tuple[str, str]:
    """A copy that normalizes identically (even variant) or differs in one answer word."""
    if variant % 2 == 0:
        return record.question.upper() + "?", record.answer.capitalize() + "."
    words = record.answer.split()
    words[int(rng.integers(len(words), 1)[0])] = _words(rng, 1)[0]
    return record.question, " ".join(words)


def synth_instructions(
    seed: int, count: int, duplicate_rate: float
) -> tuple[list[InstructionRecord], list[dict[str, str]]]:
    """
    Generate an instruction stream with planted near-duplicates.

    Exactly ``round(duplicate_rate * count)`` records are near-duplicates, each
    placed somewhere after the record it copies.

    Returns:
        (records in stream order, truth rows {"id", "of"} for every planted duplicate)
    """
    rng = SplitMix64(seed, "synth/instructions")
    n_dup = round(duplicate_rate * count)
    n_orig = count - n_dup
    if n_dup and not n_orig:
        n_orig, n_dup = count, 0

    originals = []
    for i in range(n_orig):
        r = rng.fork(f"orig/{i}")
        q_len, a_len = 8 + int(r.integers(6, 1)[0]), 14 + int(r.integers(10, 1)[0])
        originals.append(
            InstructionRecord(
                id=f"orig-{i}",
                question=" ".join(_words(r, q_len)),
                answer=" ".join(_words(r, a_len)),
                template_class=TemplateClass.OPEN if i % 2 == 0 else TemplateClass.CLOSED,
                modality=ANATOMICAL_TAGS[int(r.integers(len(ANATOMICAL_TAGS), 1)[0])],
                source=f"generator-{i % 3}",
            )
        )

    # Sort keys: originals sit at their index, a duplicate strictly after its source.
    items: list[tuple[float, bool, InstructionRecord, int]] = [
        (float(i), False, rec, i) for i, rec in enumerate(originals)
    ]
    sources = rng.fork("sources").integers(n_orig, n_dup) if n_dup else np.zeros(0, dtype=np.int64)
    offsets = rng.fork("offsets").uniform(n_dup)
    for d in range(n_dup):
        src = int(sources[d])
        key = src + (1.0 - float(offsets[d])) * (n_orig - src)
        question, answer = _near_duplicate(originals[src], d, rng.fork(f"dup/{d}"))
        dup = originals[src].model_copy(update={"question": question, "answer": answer})
        items.append((key, True, dup, src))
    items.sort(key=lambda t: (t[0], t[1]))

    records, truth = [], []
    final_ids: dict[int, str] = {}
    for pos, (_, is_dup, rec, index) in enumerate(items):
        rid = f"ins-{pos:05d}"
        records.append(rec.model_copy(update={"id": rid}))
        if is_dup:
            truth.append({"id": rid, "of": final_ids[index]})
        else:
            final_ids[index] = rid
    return records, truth


def write_corpus(
    directory: str | Path,
    seed: int,
    model_config: ModelConfig,
    data_config: DataConfig,
    config_echo: dict[str, Any] | None = None,
) -> dict[str, Path]:
    """
    Write the caption and instruction corpora.

    Files: ``manifest.json`` (format, seed, counts, config echo), ``images.bin``,
    ``captions.jsonl``, ``instructions.jsonl`` and the ``duplicates.json`` truth
    sidecar. Output bytes depend only on the arguments.

    Raises:
        SerializationError: If a file cannot be written
    """
    out = Path(directory)
    samples = synth_captions(seed, data_config.count, model_config, data_config.prompt)
    records, truth = synth_instructions(
        seed, data_config.instruction_count, data_config.duplicate_rate
    )
    side, channels = model_config.image_size, model_config.channels
    stack = (
        np.stack([s.image for s in samples])
        if samples
        else np.zeros((0, side, side, channels), dtype=np.float64)
    )

    paths = {
        "images": write_images(out / IMAGES_FILE, stack),
        "captions": write_jsonl(out / CAPTIONS_FILE, (s.to_row() for s in samples)),
        "instructions": write_records(out / INSTRUCTIONS_FILE, records),
    }
    truth_doc = {
        "count": data_config.instruction_count,
        "duplicate_rate": data_config.duplicate_rate,
        "planted": truth,
    }
    manifest = {
        "format": CORPUS_FORMAT,
        "seed": seed,
        "captions": len(samples),
        "instructions": len(records),
        "image_shape": [side, side, channels],
        "config": config_echo or {},
    }
    try:
        paths["truth"] = out / TRUTH_FILE
        paths["truth"].write_text(json.dumps(truth_doc, indent=2, sort_keys=True) + "\n", "utf-8")
        paths["manifest"] = out / MANIFEST_FILE
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    except OSError as e:
        raise SerializationError(f"Failed to write corpus metadata to {out}: {e}") from e
    logger.info(
        f"Wrote {len(samples)} caption samples and {len(records)} instruction records "
        f"({len(truth)} planted duplicates) to {out}"
    )
    return paths
