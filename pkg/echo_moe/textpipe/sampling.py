"""
Validation sampling for human review of accepted instruction records.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from ..exceptions import ContractError
from ..numerics.rng import SplitMix64
from .records import InstructionRecord

logger = logging.getLogger(__name__)


@dataclass
class ReviewBatch:
    """A consecutive batch of accepted records chosen for review."""

    index: int
    records: list[InstructionRecord]

    @property
    def sources(self) -> list[str]:
        return sorted({r.source for r in self.records})


def partition(
    records: Sequence[InstructionRecord], batch_size: int
) -> list[list[InstructionRecord]]:
    """Consecutive batches; the last one may be short."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    return [list(records[i : i + batch_size]) for i in range(0, len(records), batch_size)]


def sample_validation(
    accepted: Sequence[InstructionRecord],
    batch_size: int = 10,
    batch_rate: float = 0.05,
    seed: int = 0,
) -> list[ReviewBatch]:
    """
    Choose ceil(batch_rate * batch_count) batches uniformly without replacement.

    Returns:
        The chosen batches in ascending batch order

    Raises:
        ContractError: If there are no records or the rate is outside (0, 1]
    """
    if not accepted:
        raise ContractError("cannot sample validation batches from an empty corpus")
    if not 0.0 < batch_rate <= 1.0:
        raise ContractError(f"batch_rate must lie in (0, 1], got {batch_rate}")
    batches = partition(accepted, batch_size)
    count = math.ceil(round(batch_rate * len(batches), 9))
    chosen = sorted(int(i) for i in SplitMix64(seed, "validation").choice(len(batches), count))
    logger.info(f"Sampled {count} of {len(batches)} batches for review")
    return [ReviewBatch(index=i, records=batches[i]) for i in chosen]


def flag_sources(sampled: Sequence[ReviewBatch], faulty: Iterable[int]) -> list[str]:
    """
    Provenance sources of the batches a reviewer marked faulty.

    Args:
        sampled: Batches handed out for review
        faulty: Batch indices the reviewer rejected

    Raises:
        ContractError: If a faulty index was never sampled
    """
    by_index = {b.index: b for b in sampled}
    sources: set[str] = set()
    for i in faulty:
        if i not in by_index:
            raise ContractError(f"batch {i} was not sampled for review")
        sources.update(by_index[i].sources)
    return sorted(sources)
