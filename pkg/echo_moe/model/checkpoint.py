"""
Checkpoint serialization.

A checkpoint is a directory holding ``parameters.bin`` (raw little-endian
float64 values of every parameter, concatenated in manifest order) and
``manifest.json`` (names, shapes, frozen flags, byte offsets, the model and run
configuration echo and the root seed). LoRA adapters live under the ``lora.``
namespace, so a checkpoint written before adapters were attached loads into a
model that has them.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ..base.config import LoraConfig, ModelConfig, RunConfig
from ..exceptions import CheckpointError
from ..numerics.tensor import Parameter
from .lora import LORA_NAMESPACE
from .transformer import MultimodalTransformer

logger = logging.getLogger(__name__)

FORMAT_NAME = "echo-moe-checkpoint"
FORMAT_VERSION = 1
PARAMS_FILE = "parameters.bin"
MANIFEST_FILE = "manifest.json"
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """A loaded checkpoint: manifest plus parameter arrays by name."""

    manifest: dict[str, Any]
    arrays: dict[str, np.ndarray]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.manifest["model_config"])

    @property
    def lora_config(self) -> LoraConfig | None:
        lora = self.manifest.get("lora")
        return LoraConfig(**lora) if lora else None

    @property
    def seed(self) -> int:
        return int(self.manifest["seed"])

    @property
    def run_config(self) -> RunConfig | None:
        config = self.manifest.get("config")
        return RunConfig(**config) if config else None


def parameter_digest(params: Mapping[str, Parameter], names: Iterable[str] | None = None) -> str:
    """SHA-256 over the names and raw bytes of the selected parameters, in name order."""
    h = hashlib.sha256()
    for name in sorted(params if names is None else names):
        h.update(name.encode("utf-8"))
        h.update(params[name].data.astype(_DTYPE).tobytes())
    return h.hexdigest()


def save_checkpoint(
    directory: str | Path,
    model: MultimodalTransformer,
    run_config: RunConfig | None = None,
    stage: str | None = None,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    """
    Write ``model`` to ``directory``.

    Raises:
        CheckpointError: If the files cannot be written; the message names the path
    """
    path = Path(directory)
    params = model.named_parameters()
    entries = []
    offset = 0
    for name, param in params.items():
        nbytes = param.size * _DTYPE.itemsize
        entries.append(
            {
                "name": name,
                "shape": list(param.shape),
                "frozen": param.frozen,
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    manifest: dict[str, Any] = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "seed": model.seed,
        "stage": stage,
        "model_config": model.config.model_dump(mode="json"),
        "lora": model.lora_config.model_dump(mode="json") if model.lora_config else None,
        "config": run_config.echo() if run_config is not None else None,
        "parameters": entries,
        "extra": dict(extra or {}),
    }
    try:
        path.mkdir(parents=True, exist_ok=True)
        with open(path / PARAMS_FILE, "wb") as f:
            for param in params.values():
                f.write(param.data.astype(_DTYPE).tobytes())
        with open(path / MANIFEST_FILE, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint to {path}: {e}") from e
    logger.info(f"Checkpoint written to {path} ({len(entries)} parameters, {offset} bytes)")
    return path


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """
    Read a checkpoint directory.

    Raises:
        CheckpointError: If the files are missing, malformed or inconsistent
    """
    path = Path(directory)
    try:
        manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
        blob = (path / PARAMS_FILE).read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"Checkpoint not found at {path}: {e.filename}") from e
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Failed to read checkpoint at {path}: {e}") from e

    if manifest.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path} is not an echo-moe checkpoint")
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest.get("parameters", []):
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        shape = tuple(int(s) for s in entry["shape"])
        if start + nbytes > len(blob) or nbytes != int(np.prod(shape)) * _DTYPE.itemsize:
            raise CheckpointError(f"{path}: parameter {entry['name']} is truncated or mis-sized")
        raw = np.frombuffer(blob, dtype=_DTYPE, count=nbytes // _DTYPE.itemsize, offset=start)
        arrays[entry["name"]] = raw.reshape(shape).astype(np.float64)
    return Checkpoint(manifest=manifest, arrays=arrays)


def restore_parameters(checkpoint: Checkpoint, model: MultimodalTransformer) -> None:
    """
    Copy checkpoint values into ``model``, validating shape for shape.

    Adapters the checkpoint does not carry keep their fresh initialization.

    Raises:
        CheckpointError: On a missing, unexpected or mis-shaped parameter
    """
    params = model.named_parameters()
    unexpected = sorted(set(checkpoint.arrays) - set(params))
    if unexpected:
        raise CheckpointError(f"checkpoint has parameters the model lacks: {unexpected[:5]}")
    frozen = {e["name"]: bool(e["frozen"]) for e in checkpoint.manifest["parameters"]}
    for name, param in params.items():
        if name not in checkpoint.arrays:
            if name.startswith(f"{LORA_NAMESPACE}."):
                continue
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        value = checkpoint.arrays[name]
        if value.shape != param.shape:
            raise CheckpointError(
                f"parameter {name}: checkpoint shape {value.shape} != model shape {param.shape}"
            )
        param.assign(value)
        param.frozen = frozen[name]


def build_model(
    checkpoint: Checkpoint, with_lora: LoraConfig | None = None
) -> MultimodalTransformer:
    """
    Rebuild the model a checkpoint was written from.

    Args:
        checkpoint: Loaded checkpoint
        with_lora: Attach these adapters when the checkpoint has none

    Raises:
        CheckpointError: If the stored configuration is invalid or shapes disagree
    """
    try:
        config = checkpoint.model_config
        lora = checkpoint.lora_config or with_lora
    except ValueError as e:
        raise CheckpointError(f"checkpoint configuration is invalid: {e}") from e
    model = MultimodalTransformer(config, seed=checkpoint.seed)
    if lora is not None:
        model.attach_lora(lora)
    restore_parameters(checkpoint, model)
    return model
