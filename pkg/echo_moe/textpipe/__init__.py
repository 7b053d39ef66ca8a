"""
Instruction-data pipeline: records, normalization, similarity, deduplication,
validation sampling and template generation.
"""

from .dedup import DedupIndex, Rejection, dedup, similarity_tokens
from .generation import EchoTemplateGenerator, build_prompt, generate_records
from .normalize import char_tokens, normalize
from .records import (
    InstructionRecord,
    TemplateClass,
    read_records,
    write_jsonl,
    write_records,
)
from .sampling import ReviewBatch, flag_sources, partition, sample_validation
from .similarity import hamming, lcs_length, rouge_l_sim, simhash64, simhash_signature

__all__ = [
    "InstructionRecord",
    "TemplateClass",
    "read_records",
    "write_records",
    "write_jsonl",
    "normalize",
    "char_tokens",
    "lcs_length",
    "rouge_l_sim",
    "simhash64",
    "simhash_signature",
    "hamming",
    "DedupIndex",
    "Rejection",
    "dedup",
    "similarity_tokens",
    "ReviewBatch",
    "partition",
    "sample_validation",
    "flag_sources",
    "build_prompt",
    "generate_records",
    "EchoTemplateGenerator",
]
