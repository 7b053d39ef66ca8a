"""
Stage-aware training loop.

Each step runs the model over a batch of sequences, combines the autoregressive
loss over response tokens with the balance loss summed over blocks, and applies
a masked AdamW update. Dispatch statistics are taken over all tokens of the
step's sequences. Frozen parameters are digested before and after the run and
must come out byte-identical.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..base.config import RunConfig, Stage, TrainPlan
from ..exceptions import ContractError, InvariantError, SerializationError
from ..model.checkpoint import parameter_digest, save_checkpoint
from ..model.lora import lora_parameter_count
from ..model.transformer import (
    MultimodalTransformer,
    SequenceInput,
    ar_loss,
    total_loss,
    validate_sequence,
)
from ..numerics import functional as F
from ..numerics.rng import SplitMix64
from ..numerics.tensor import GradTape, backward
from ..utils.performance import PerformanceMonitor
from .freeze import apply_freeze, count_parameters, freeze_mask
from .optim import OptimState, adamw_step
from .schedule import lr_at

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_DIR = "checkpoint"


@dataclass
class TrainResult:
    """Outcome of one training stage."""

    history: list[dict[str, Any]]
    parameter_counts: dict[str, int]
    frozen_digest: str
    checkpoint: Path | None = None
    metrics_path: Path | None = None
    total_steps: int = 0
    monitor: PerformanceMonitor = field(default_factory=PerformanceMonitor)

    @property
    def final_ar_loss(self) -> float:
        return float(self.history[-1]["ar_loss"]) if self.history else math.nan


def _batches(n: int, batch_size: int, seed: int, total_steps: int) -> list[np.ndarray]:
    """Shuffled index batches, reshuffled every epoch, until the step budget is used."""
    per_epoch = math.ceil(n / batch_size)
    out: list[np.ndarray] = []
    epoch = 0
    while len(out) < total_steps:
        order = SplitMix64(seed, f"shuffle/{epoch}").permutation(n)
        for b in range(per_epoch):
            if len(out) == total_steps:
                break
            out.append(order[b * batch_size : (b + 1) * batch_size])
        epoch += 1
    return out


def train_step(
    model: MultimodalTransformer,
    batch: Sequence[SequenceInput],
    gamma: float,
    rng: SplitMix64 | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """
    Forward and backward over one batch.

    Returns:
        (gradients of trainable parameters, step record without lr/step fields)
    """
    params = model.named_parameters()
    with GradTape() as tape:
        outputs, response_logits, targets = [], [], []
        for j, seq in enumerate(batch):
            out = model.forward(seq, training=True, rng=rng.fork(j) if rng else None)
            outputs.append(out)
            response_logits.append(out.response_logits(seq.prompt_ids.size, seq.target_ids.size))
            targets.append(seq.target_ids)
        logits = response_logits[0] if len(batch) == 1 else F.concat_rows(response_logits)
        ar = ar_loss(logits, np.concatenate(targets))
        stats = model.layer_stats(outputs)
        bal = model.balance_total(stats)
        total = total_loss(ar, bal, gamma)
    grads = backward(tape, total, params.values())

    ar_v, bal_v, total_v = ar.item(), bal.item(), total.item()
    if abs(total_v - (ar_v + gamma * bal_v)) > 1e-12:
        raise InvariantError(f"logged total {total_v} != ar + gamma * bal")
    record = {
        "ar_loss": ar_v,
        "bal_loss": bal_v,
        "total": total_v,
        "tokens": int(sum(o.logits.shape[0] for o in outputs)),
        "layers": [
            {
                "layer": i,
                "F": s.F.tolist(),
                "G": s.G_values.tolist(),
                "F_image": s.F_image.tolist(),
                "F_text": s.F_text.tolist(),
            }
            for i, s in enumerate(stats)
        ],
    }
    return grads, record


def train_loop(
    plan: TrainPlan,
    corpus: Sequence[SequenceInput],
    model: MultimodalTransformer,
    output_dir: str | Path | None = None,
    run_config: RunConfig | None = None,
) -> TrainResult:
    """
    Train ``model`` in place for one stage.

    Args:
        plan: Stage, schedule and loss weights
        corpus: Training sequences
        model: Model to update; Stage II needs LoRA adapters attached
        output_dir: Where the metrics log and checkpoint go (None keeps everything in memory)
        run_config: Configuration echoed into the checkpoint manifest

    Raises:
        ContractError: If the corpus is empty or the model does not fit the stage
        InvariantError: If a frozen parameter changed or parameter accounting fails
        TrainingError: If a gradient is not finite
        CheckpointError: If the checkpoint cannot be written
    """
    if not corpus:
        raise ContractError("training corpus is empty")
    for seq in corpus:
        validate_sequence(seq, model.config)
    stage = Stage(plan.stage)
    if stage is Stage.STAGE_II and not model.adapters:
        raise ContractError("Stage II needs LoRA adapters attached to the model")

    params = model.named_parameters()
    apply_freeze(params, freeze_mask(params, stage))
    trainable = {n: p for n, p in params.items() if not p.frozen}
    frozen_names = [n for n, p in params.items() if p.frozen]
    counts = count_parameters(params)
    if stage is Stage.STAGE_II and counts["lora"] != lora_parameter_count(model.adapters):
        raise InvariantError(
            f"LoRA parameter count {counts['lora']} != sum of r(d + d') "
            f"{lora_parameter_count(model.adapters)}"
        )
    logger.info(
        f"Stage {stage.value}: {counts['trainable']} trainable / {counts['total']} parameters "
        f"(moe {counts['moe']}, lora {counts['lora']})"
    )

    per_epoch = math.ceil(len(corpus) / plan.batch_size)
    total_steps = plan.total_steps or plan.epochs * per_epoch
    batches = _batches(len(corpus), plan.batch_size, plan.seed, total_steps)
    state = OptimState(beta1=plan.beta1, beta2=plan.beta2, eps=plan.adam_eps)
    dropout_root = SplitMix64(plan.seed, "dropout")
    digest_before = parameter_digest(params, frozen_names)
    monitor = PerformanceMonitor()
    history: list[dict[str, Any]] = []

    out_dir = Path(output_dir) if output_dir is not None else None
    metrics_path = out_dir / METRICS_FILE if out_dir is not None else None
    log_file = None
    if metrics_path is not None:
        try:
            metrics_path.parent.mkdir(parents=True, exist_ok=True)
            log_file = open(metrics_path, "w", encoding="utf-8")
        except OSError as e:
            raise SerializationError(f"Failed to open metrics log {metrics_path}: {e}") from e

    previous_alpha = [b.moe.alpha_override for b in model.blocks]
    if stage is Stage.BASE:
        model.set_alpha_override(1.0)
    try:
        for step, index in enumerate(batches):
            # midpoint rate: no step runs at zero
            lr = lr_at(step + 0.5, plan, total_steps)
            batch = [corpus[int(i)] for i in index]
            with monitor.measure("train_step") as meta:
                grads, record = train_step(model, batch, plan.gamma, dropout_root.fork(step))
                adamw_step(trainable, grads, state, lr, plan.weight_decay)
                meta["tokens"] = record["tokens"]
            record = {"step": step, "epoch": step // per_epoch, "lr": lr, **record}
            history.append(record)
            if log_file is not None and (step % plan.log_every == 0 or step == total_steps - 1):
                timing = {"step_ms": monitor.last("train_step")}
                log_file.write(json.dumps({**record, "timing": timing}, sort_keys=True) + "\n")
            logger.debug(
                f"step {step}: ar {record['ar_loss']:.5f} bal {record['bal_loss']:.5f} lr {lr:.3e}"
            )
    finally:
        for block, value in zip(model.blocks, previous_alpha):
            block.moe.alpha_override = value
        if log_file is not None:
            log_file.close()

    digest_after = parameter_digest(params, frozen_names)
    if digest_after != digest_before:
        raise InvariantError(f"frozen parameters changed during Stage {stage.value}")

    checkpoint = None
    if out_dir is not None:
        checkpoint = save_checkpoint(
            out_dir / CHECKPOINT_DIR,
            model,
            run_config=run_config,
            stage=stage.value,
            extra={"total_steps": total_steps, "final_ar_loss": history[-1]["ar_loss"]},
        )
    monitor.log_summary()
    logger.info(
        f"Stage {stage.value} finished after {total_steps} steps, "
        f"final ar-loss {history[-1]['ar_loss']:.5f}"
    )
    return TrainResult(
        history=history,
        parameter_counts=counts,
        frozen_digest=digest_after,
        checkpoint=checkpoint,
        metrics_path=metrics_path,
        total_steps=total_steps,
        monitor=monitor,
    )
