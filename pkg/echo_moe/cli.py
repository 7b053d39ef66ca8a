"""
Command-line interface for echo-moe.

Subcommands: synth, train, decode, eval, dedup and route-stats. Exit codes are
0 on success, 1 when an invariant check fails, and 2 for usage, configuration
and data errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError
from rich.console import Console

from .base.config import ANATOMICAL_TAGS, ModelConfig, RunConfig, Stage, TrainPlan
from .data.corpus import build_sequences, load_captions, prompt_sequence
from .data.synth import GENERATED_FILE, write_corpus
from .data.tokenizer import ByteTokenizer
from .exceptions import (
    ConfigurationError,
    ContractError,
    DataError,
    EchoMoEError,
    InvariantError,
)
from .factory import (
    create_generator,
    create_run_config_from_env,
    load_run_config,
    write_config_echo,
)
from .metrics.report import evaluate_corpus, make_pairs, render_report, write_report_csv
from .model.checkpoint import build_model, load_checkpoint
from .model.transformer import MultimodalTransformer, greedy_decode
from .textpipe.dedup import dedup
from .textpipe.generation import generate_records
from .textpipe.records import read_records, write_jsonl, write_records
from .textpipe.sampling import sample_validation
from .training.trainer import train_loop
from .utils.analytics import modality_summary, write_routing_csv
from .utils.performance import PerformanceMonitor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_ERROR = 2


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    """JSON file, then ECHO_MOE_* environment, then command-line flags."""
    run = create_run_config_from_env(load_run_config(args.config))
    updates: dict[str, Any] = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.debug:
        updates["debug"] = True
    if not updates:
        return run
    try:
        return RunConfig.model_validate({**run.model_dump(exclude_unset=True), **updates})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid command-line settings: {e}") from e


def _model_config(run: RunConfig, args: argparse.Namespace) -> ModelConfig:
    """Model shape with the ablation and geometry flags applied."""
    updates: dict[str, Any] = {}
    for flag, field_name in (
        ("image_side", "image_size"),
        ("num_experts", "num_experts"),
        ("top_k", "top_k"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field_name] = value
    if getattr(args, "no_shared_expert", False):
        updates["use_shared_expert"] = False
    if not updates:
        return run.model
    try:
        return ModelConfig.model_validate({**run.model.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid model geometry: {e}") from e


def _train_plan(run: RunConfig, args: argparse.Namespace) -> TrainPlan:
    values = run.train.model_dump(exclude_unset=True)
    values.update(stage=args.stage, seed=run.seed)
    for flag, field_name in (
        ("epochs", "epochs"),
        ("total_steps", "total_steps"),
        ("gamma", "gamma"),
        ("lr", "lr_peak"),
        ("batch_size", "batch_size"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            values[field_name] = value
    try:
        return TrainPlan.model_validate(values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid training plan: {e}") from e


def _corpus_dir(run: RunConfig, args: argparse.Namespace) -> Path:
    return Path(args.corpus) if getattr(args, "corpus", None) else run.data.corpus_dir


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigurationError(f"Cannot read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not UTF-8 text: {e}") from e


def _write_lines(path: str | Path, lines: Sequence[str]) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def cmd_synth(args: argparse.Namespace) -> int:
    """Write the synthetic caption and instruction corpora."""
    run = _resolve_config(args)
    model_config = _model_config(run, args)
    data = run.data
    updates = {
        key: value
        for key, value in (
            ("count", args.count),
            ("instruction_count", args.instruction_count),
            ("duplicate_rate", args.duplicate_rate),
        )
        if value is not None
    }
    if updates:
        try:
            data = type(data).model_validate({**data.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigurationError(f"Invalid corpus settings: {e}") from e
    out = Path(args.out) if args.out else data.corpus_dir
    echo = {**run.echo(), "model": model_config.model_dump(mode="json")}
    echo["data"] = data.model_dump(mode="json")
    paths = write_corpus(out, run.seed, model_config, data, config_echo=echo)
    if args.generator:
        generator = create_generator(args.generator)
        reports = [(s.id, s.caption, s.tag) for s in load_captions(out)]
        generated = generate_records(generator, reports)
        paths["generated"] = write_records(out / GENERATED_FILE, generated)
        write_config_echo(paths["generated"], {**echo, "generator": args.generator})
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Run one training stage and write its checkpoint and metrics log."""
    run = _resolve_config(args)
    plan = _train_plan(run, args)
    stage = Stage(plan.stage)

    if args.from_checkpoint:
        checkpoint = load_checkpoint(args.from_checkpoint)
        model = build_model(checkpoint, with_lora=run.lora if stage is Stage.STAGE_II else None)
        logger.info(f"Resuming from {args.from_checkpoint} (stage {checkpoint.manifest['stage']})")
    elif stage is Stage.STAGE_II:
        raise ContractError("Stage II needs --from-checkpoint pointing at a Stage I checkpoint")
    else:
        model = MultimodalTransformer(_model_config(run, args), seed=run.seed)
        if stage is Stage.STAGE_I:
            logger.warning("Stage I on a fresh model: the frozen base was never trained")

    samples = load_captions(_corpus_dir(run, args))
    corpus = build_sequences(samples, model.config)
    out = Path(args.out) if args.out else run.output_dir / f"stage-{stage.value}"
    result = train_loop(plan, corpus, model, output_dir=out, run_config=run)
    print(f"checkpoint: {result.checkpoint}")
    print(f"final ar-loss: {result.final_ar_loss:.6f}")
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    """Greedy-decode the corpus prompts and/or the lines of a prompt file."""
    run = _resolve_config(args)
    model = build_model(load_checkpoint(args.checkpoint))
    config = model.config
    tokenizer = ByteTokenizer(config.bos_id, config.sep_id, config.eos_id)

    jobs = []
    references, tags = [], []
    if args.corpus:
        for sample in load_captions(args.corpus):
            jobs.append(prompt_sequence(sample.prompt, config, sample.image, tokenizer))
            references.append(sample.caption)
            tags.append(sample.tag)
    if args.prompt_file:
        for line in _read_lines(args.prompt_file):
            jobs.append(prompt_sequence(line, config, tokenizer=tokenizer))
    if not jobs:
        raise ContractError("nothing to decode: give --corpus and/or --prompt-file")

    monitor = PerformanceMonitor()
    outputs = []
    for seq in jobs:
        visual = config.visual_tokens if seq.image is not None else 0
        budget = min(args.max_new, config.max_len - visual - seq.prompt_ids.size)
        with monitor.measure("decode"):
            ids = greedy_decode(model, seq, max(budget, 0))
        text = tokenizer.decode(ids).replace("\n", " ")
        outputs.append(text)
        print(text)
    monitor.log_summary()

    echo = {
        "run": run.echo(),
        "checkpoint": str(args.checkpoint),
        "model": config.model_dump(mode="json"),
        "lora": model.lora_config.model_dump(mode="json") if model.lora_config else None,
        "max_new": args.max_new,
    }
    written = ((args.out, outputs), (args.references_out, references), (args.tags_out, tags))
    for path, rows in written:
        if path and rows:
            _write_lines(path, rows)
            write_config_echo(path, echo)
    logger.debug(f"Decoded {len(outputs)} prompts with seed {run.seed}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Score predictions against references and print the report."""
    run = _resolve_config(args)
    metrics = run.metrics
    if args.tokenization:
        metrics = metrics.model_copy(update={"tokenization": args.tokenization})
    predictions = _read_lines(args.pred)
    references = _read_lines(args.ref)
    tags = _read_lines(args.tags) if args.tags else None
    if tags is not None:
        unknown = sorted({t for t in tags if t not in ANATOMICAL_TAGS})
        if unknown:
            logger.warning(f"Tags outside the anatomical vocabulary: {unknown}")

    pairs = make_pairs(predictions, references, tags, metrics.tokenization)
    monitor = PerformanceMonitor()
    with monitor.measure("evaluate", item_count=len(pairs)):
        report = evaluate_corpus(pairs, config=metrics)
    monitor.log_summary()
    render_report(report, Console())
    if args.out:
        write_report_csv(report, args.out)
        echo = {
            "run": {**run.echo(), "metrics": metrics.model_dump(mode="json")},
            "pred": str(args.pred),
            "ref": str(args.ref),
            "tags": str(args.tags) if args.tags else None,
        }
        write_config_echo(args.out, echo)
    return EXIT_OK


def cmd_dedup(args: argparse.Namespace) -> int:
    """Filter an instruction JSON-lines file and report rejections."""
    run = _resolve_config(args)
    rouge = args.rouge if args.rouge is not None else run.dedup.rouge_threshold
    hamming = args.hamming if args.hamming is not None else run.dedup.hamming_threshold
    records = read_records(args.input)
    monitor = PerformanceMonitor()
    with monitor.measure("dedup", item_count=len(records)):
        accepted, rejected = dedup(records, rouge_threshold=rouge, hamming_threshold=hamming)
    monitor.log_summary()

    echo = {
        "run": run.echo(),
        "input": str(args.input),
        "rouge_threshold": rouge,
        "hamming_threshold": hamming,
    }
    write_records(args.output, accepted)
    write_config_echo(args.output, echo)
    rejected_path = args.rejected or str(Path(args.output).with_suffix(".rejected.jsonl"))
    header = {
        "header": {
            "rouge_threshold": rouge,
            "hamming_threshold": hamming,
            "input": len(records),
            "accepted": len(accepted),
            "rejected": len(rejected),
            "config": run.echo(),
        }
    }
    write_jsonl(rejected_path, [header, *(r.to_dict() for r in rejected)])

    if args.review:
        rows = []
        if accepted:
            for batch in sample_validation(accepted, seed=run.seed):
                rows.append(
                    {
                        "batch": batch.index,
                        "ids": [r.id for r in batch.records],
                        "sources": batch.sources,
                    }
                )
        write_jsonl(args.review, rows)
        write_config_echo(args.review, echo)
    print(f"accepted {len(accepted)} rejected {len(rejected)}")
    return EXIT_OK


def cmd_route_stats(args: argparse.Namespace) -> int:
    """Export per-layer, per-expert dispatch statistics over a corpus."""
    run = _resolve_config(args)
    if args.checkpoint:
        model = build_model(load_checkpoint(args.checkpoint))
    else:
        model = MultimodalTransformer(_model_config(run, args), seed=run.seed)
    corpus = build_sequences(load_captions(_corpus_dir(run, args)), model.config)
    if not corpus:
        raise ContractError("routing statistics need a non-empty corpus")
    outputs = [model.forward(seq) for seq in corpus]
    stats = model.layer_stats(outputs)
    echo = {
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "seed": run.seed,
        "model": model.config.model_dump(mode="json"),
        "lora": model.lora_config.model_dump(mode="json") if model.lora_config else None,
    }
    frame = write_routing_csv(args.out, stats, echo)
    summary = modality_summary(frame)
    for layer, row in summary.iterrows():
        logger.info(
            f"layer {layer}: cv(F) {row['cv_F']:.4f}, image/text gap {row['image_text_gap']:.4f}"
        )
    print(f"routing statistics: {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="Root seed (overrides config and ECHO_MOE_SEED)")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")

    ablation = argparse.ArgumentParser(add_help=False)
    ablation.add_argument("--num-experts", type=int, help="Routing expert count")
    ablation.add_argument("--top-k", type=int, help="Experts selected per token")
    ablation.add_argument(
        "--no-shared-expert", action="store_true", help="Disable the shared expert path"
    )

    parser = argparse.ArgumentParser(
        prog="echo-moe", description="Dual-path MoE multimodal transformer toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="Generate synthetic corpora")
    synth.add_argument("--out", help="Corpus directory")
    synth.add_argument("--count", type=int, help="Caption pairs")
    synth.add_argument("--instruction-count", type=int, help="Instruction records")
    synth.add_argument("--duplicate-rate", type=float, help="Fraction of planted duplicates")
    synth.add_argument("--image-side", type=int, help="Image side in pixels")
    synth.add_argument(
        "--generator", help="Also write generated.jsonl from the captions with this generator"
    )
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", parents=[common, ablation], help="Run one training stage")
    train.add_argument("--stage", required=True, choices=[s.value for s in Stage])
    train.add_argument("--corpus", help="Corpus directory")
    train.add_argument("--from-checkpoint", help="Checkpoint to start from (required for II)")
    train.add_argument("--out", help="Output directory")
    train.add_argument("--epochs", type=int)
    train.add_argument("--total-steps", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--gamma", type=float, help="Balance loss weight")
    train.add_argument("--lr", type=float, help="Peak learning rate")
    train.set_defaults(func=cmd_train)

    decode = sub.add_parser("decode", parents=[common], help="Greedy decoding")
    decode.add_argument("--checkpoint", required=True)
    decode.add_argument("--corpus", help="Decode every caption prompt of this corpus")
    decode.add_argument("--prompt-file", help="Text prompts, one per line")
    decode.add_argument("--max-new", type=int, default=64)
    decode.add_argument("--out", help="Write generated texts here, one per line")
    decode.add_argument("--references-out", help="Write corpus captions here")
    decode.add_argument("--tags-out", help="Write corpus tags here")
    decode.set_defaults(func=cmd_decode)

    evaluate = sub.add_parser("eval", parents=[common], help="Score predictions")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--ref", required=True)
    evaluate.add_argument("--tags", help="Anatomical tag per line")
    evaluate.add_argument("--tokenization", choices=["word", "char"])
    evaluate.add_argument("--out", help="CSV report")
    evaluate.set_defaults(func=cmd_eval)

    dd = sub.add_parser("dedup", parents=[common], help="Deduplicate instruction records")
    dd.add_argument("input")
    dd.add_argument("output")
    dd.add_argument("--rejected", help="Rejection report (default <output>.rejected.jsonl)")
    dd.add_argument("--rouge", type=float, help="Reject when ROUGE-L exceeds this")
    dd.add_argument("--hamming", type=int, help="Reject when Hamming distance is at most this")
    dd.add_argument("--review", help="Write batches sampled for human review")
    dd.set_defaults(func=cmd_dedup)

    route = sub.add_parser(
        "route-stats", parents=[common, ablation], help="Export routing statistics"
    )
    route.add_argument("--checkpoint", help="Checkpoint (default: fresh model from config)")
    route.add_argument("--corpus", help="Corpus directory")
    route.add_argument("--out", required=True, help="CSV output")
    route.set_defaults(func=cmd_route_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point for the ``echo-moe`` console script."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        return args.func(args)
    except InvariantError as e:
        logger.error(f"Invariant violated: {e}")
        return EXIT_INVARIANT
    except EchoMoEError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
