"""
Corpus evaluation reports.

Per-pair scores are averaged within each anatomical tag, tag rows are averaged
into an ``Average`` row (macro average), and everything is scaled for
presentation. Reports are pandas DataFrames, written as CSV and rendered with
rich.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
from rich.console import Console
from rich.table import Table

from ..base.config import ANATOMICAL_TAGS, MetricsConfig
from ..exceptions import ContractError, DataError, SerializationError
from ..textpipe.normalize import char_tokens, normalize
from .scores import METRICS

logger = logging.getLogger(__name__)

AVERAGE_ROW = "Average"
REPORT_COLUMNS = ["tag", "pairs", *METRICS.keys(), "note"]


@dataclass
class EvalPair:
    """Candidate and reference tokens of one evaluated response."""

    candidate: list[str]
    reference: list[str]
    tag: str = ""


@dataclass
class EvalReport:
    """Evaluation table plus the warnings raised while building it."""

    frame: pd.DataFrame
    warnings: list[str] = field(default_factory=list)

    def row(self, tag: str) -> pd.Series:
        return self.frame.set_index("tag").loc[tag]


def tokenize(text: str, tokenization: str = "word") -> list[str]:
    """Metric tokens of ``text`` for the configured tokenization."""
    if tokenization == "word":
        return normalize(text)
    if tokenization == "char":
        return char_tokens(text)
    raise ContractError(f"unknown tokenization {tokenization!r}")


def make_pairs(
    candidates: Sequence[str],
    references: Sequence[str],
    tags: Sequence[str] | None = None,
    tokenization: str = "word",
) -> list[EvalPair]:
    """
    Tokenize aligned candidate and reference texts.

    Raises:
        DataError: If the inputs have different lengths
    """
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} predictions but {len(references)} references")
    if tags is not None and len(tags) != len(candidates):
        raise DataError(f"{len(tags)} tags for {len(candidates)} predictions")
    tags = tags if tags is not None else [""] * len(candidates)
    return [
        EvalPair(tokenize(c, tokenization), tokenize(r, tokenization), t)
        for c, r, t in zip(candidates, references, tags)
    ]


def _tag_order(present: Iterable[str], requested: Sequence[str] | None) -> list[str]:
    if requested is not None:
        return list(dict.fromkeys(requested))
    present = set(present)
    known = [t for t in ANATOMICAL_TAGS if t in present]
    return known + sorted(present - set(known))


def evaluate_corpus(
    pairs: Sequence[EvalPair],
    tags: Sequence[str] | None = None,
    config: MetricsConfig | None = None,
) -> EvalReport:
    """
    Score every pair and aggregate by tag.

    Args:
        pairs: Tokenized pairs
        tags: Tag rows to report, in order; defaults to the tags present, anatomical
            tags first in their canonical order
        config: Scaling settings

    Returns:
        Report with one row per tag, then the ``Average`` row. A requested tag with
        no pairs becomes a warning row without scores and is left out of the average.

    Raises:
        ContractError: If there are no pairs
    """
    if not pairs:
        raise ContractError("cannot evaluate an empty corpus")
    config = config or MetricsConfig()

    scores = pd.DataFrame(
        [
            {"tag": p.tag, **{m: fn(p.candidate, p.reference) for m, fn in METRICS.items()}}
            for p in pairs
        ]
    )
    rows, warnings = [], []
    for tag in _tag_order(scores["tag"], tags):
        group = scores[scores["tag"] == tag]
        if group.empty:
            message = f"no pairs for tag {tag!r}; omitted"
            logger.warning(message)
            warnings.append(message)
            rows.append({"tag": tag, "pairs": 0, "note": message})
            continue
        means = group[list(METRICS)].mean() * config.scale
        rows.append({"tag": tag, "pairs": len(group), **means.to_dict(), "note": ""})

    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    scored = frame[frame["pairs"] > 0]
    average = {"tag": AVERAGE_ROW, "pairs": int(scored["pairs"].sum()), "note": ""}
    average.update(scored[list(METRICS)].mean().to_dict())
    frame = pd.concat([frame, pd.DataFrame([average], columns=REPORT_COLUMNS)], ignore_index=True)
    frame["pairs"] = frame["pairs"].astype(int)
    logger.info(f"Evaluated {len(pairs)} pairs over {len(scored)} tags")
    return EvalReport(frame=frame, warnings=warnings)


def write_report_csv(report: EvalReport, path: str | Path) -> Path:
    """Write the report table as CSV."""
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        report.frame.to_csv(out, index=False, float_format="%.4f", lineterminator="\n")
    except OSError as e:
        raise SerializationError(f"Failed to write evaluation report to {out}: {e}") from e
    return out


def render_report(report: EvalReport, console: Console | None = None) -> Table:
    """Print the report as an aligned table and return it."""
    table = Table(title="Evaluation", show_header=True, header_style="bold cyan")
    table.add_column("Tag", style="bold")
    table.add_column("Pairs", justify="right")
    for metric in METRICS:
        table.add_column(metric, justify="right")
    for record in report.frame.to_dict("records"):
        if record["pairs"] == 0:
            table.add_row(record["tag"], "0", *["-"] * len(METRICS), style="yellow")
            continue
        table.add_row(
            str(record["tag"]), str(record["pairs"]), *[f"{record[m]:.2f}" for m in METRICS]
        )
    (console or Console()).print(table)
    return table
