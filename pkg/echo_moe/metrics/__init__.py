"""
Evaluation metrics and corpus reports.
"""

from .report import (
    AVERAGE_ROW,
    EvalPair,
    EvalReport,
    evaluate_corpus,
    make_pairs,
    render_report,
    tokenize,
    write_report_csv,
)
from .scores import METRICS, bleu1, clipped_overlap, meteor_exact, min_chunks, rouge1, rougeL

__all__ = [
    "bleu1",
    "rouge1",
    "rougeL",
    "meteor_exact",
    "clipped_overlap",
    "min_chunks",
    "METRICS",
    "EvalPair",
    "EvalReport",
    "AVERAGE_ROW",
    "tokenize",
    "make_pairs",
    "evaluate_corpus",
    "write_report_csv",
    "render_report",
]
