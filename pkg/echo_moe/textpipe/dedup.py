"""
Sequential near-duplicate filtering of instruction records.

Records are compared against everything accepted before them; earlier records
win. A record is rejected when its Simhash signature lies within the Hamming
threshold of an accepted signature, or when its ROUGE-L similarity to an
accepted record exceeds the ROUGE threshold. The Simhash gate runs first since
it is cheap; the outcome does not depend on the gate order.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from typing import Any

from simhash import Simhash, SimhashIndex

from ..exceptions import DataError
from .normalize import normalize
from .records import InstructionRecord
from .similarity import SIGNATURE_BITS, rouge_l_sim, simhash_signature

logger = logging.getLogger(__name__)

SEPARATOR_TOKEN = "<sep>"

GATE_SIMHASH = "simhash"
GATE_ROUGE = "rouge"


def similarity_tokens(record: InstructionRecord) -> list[str]:
    """Question tokens, a separator, then answer tokens."""
    return normalize(record.question) + [SEPARATOR_TOKEN] + normalize(record.answer)


@dataclass
class Rejection:
    """Why a record was dropped."""

    id: str
    gate: str
    against_id: str
    score: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class DedupIndex:
    """
    Token sequences and signatures of the accepted records, in acceptance order.

    Signatures within ``hamming_threshold`` bits are found through a
    :class:`simhash.SimhashIndex`; a negative threshold turns the signature gate off.
    """

    hamming_threshold: int = 3
    ids: list[str] = field(default_factory=list)
    tokens: list[list[str]] = field(default_factory=list)
    counts: list[Counter] = field(default_factory=list)
    signatures: list[Simhash] = field(default_factory=list)
    search: SimhashIndex | None = field(init=False, default=None, repr=False)

    def __post_init__(self) -> None:
        # k + 1 blocks must fit in the signature
        if 0 <= self.hamming_threshold < SIGNATURE_BITS:
            self.search = SimhashIndex([], f=SIGNATURE_BITS, k=self.hamming_threshold)

    def __len__(self) -> int:
        return len(self.ids)

    def add(self, record_id: str, tokens: list[str], signature: Simhash) -> None:
        if self.search is not None:
            self.search.add(str(len(self.ids)), signature)
        self.ids.append(record_id)
        self.tokens.append(tokens)
        self.counts.append(Counter(tokens))
        self.signatures.append(signature)

    def nearest_signature(self, signature: Simhash) -> tuple[int, int] | None:
        """
        (position, distance) of the closest accepted signature within the threshold;
        earliest wins ties.
        """
        if self.hamming_threshold < 0:
            return None
        if self.search is not None:
            candidates = [int(obj_id) for obj_id in self.search.get_near_dups(signature)]
        else:
            candidates = list(range(len(self.signatures)))
        best = None
        for i in candidates:
            d = signature.distance(self.signatures[i])
            if d <= self.hamming_threshold and (best is None or (d, i) < (best[1], best[0])):
                best = (i, d)
        return best

    def most_similar(self, tokens: list[str], threshold: float) -> tuple[int, float] | None:
        """
        (position, score) of the accepted record with the highest ROUGE-L, if it exceeds
        ``threshold``; earliest wins ties.

        Candidates whose shared-token count bounds ROUGE-L at or below the threshold
        skip the LCS computation.
        """
        counts = Counter(tokens)
        best = None
        for i, other in enumerate(self.tokens):
            overlap = sum((counts & self.counts[i]).values())
            bound = 2.0 * overlap / (len(tokens) + len(other))
            if bound <= threshold or (best is not None and bound <= best[1]):
                continue
            score = rouge_l_sim(tokens, other)
            if score > threshold and (best is None or score > best[1]):
                best = (i, score)
        return best


def dedup(
    records: Iterable[InstructionRecord],
    rouge_threshold: float = 0.7,
    hamming_threshold: int = 3,
) -> tuple[list[InstructionRecord], list[Rejection]]:
    """
    Filter a stream of records against everything accepted before each one.

    Args:
        records: Records in generation order
        rouge_threshold: Reject when ROUGE-L is strictly greater
        hamming_threshold: Reject when the Hamming distance is less than or equal

    Returns:
        (accepted records in order, rejections in order)

    Raises:
        DataError: If two records share an id
    """
    stream = list(records)
    seen: set[str] = set()
    for record in stream:
        if record.id in seen:
            raise DataError(f"duplicate record id {record.id!r}")
        seen.add(record.id)

    index = DedupIndex(hamming_threshold)
    accepted: list[InstructionRecord] = []
    rejected: list[Rejection] = []
    for record in stream:
        tokens = similarity_tokens(record)
        signature = simhash_signature(tokens)

        nearest = index.nearest_signature(signature)
        if nearest is not None:
            rejected.append(
                Rejection(record.id, GATE_SIMHASH, index.ids[nearest[0]], float(nearest[1]))
            )
            continue
        similar = index.most_similar(tokens, rouge_threshold)
        if similar is not None:
            rejected.append(Rejection(record.id, GATE_ROUGE, index.ids[similar[0]], similar[1]))
            continue

        index.add(record.id, tokens, signature)
        accepted.append(record)

    logger.info(
        f"Dedup kept {len(accepted)} of {len(stream)} records "
        f"(rouge > {rouge_threshold}, hamming <= {hamming_threshold})"
    )
    return accepted, rejected
