"""
Per-pair text metrics over normalized tokens: BLEU-1, ROUGE-1, ROUGE-L and
exact-match METEOR. All scores lie in [0, 1].
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence

from ..exceptions import ContractError
from ..textpipe.similarity import rouge_l_sim

# METEOR parameterization: Fmean recall weight, penalty exponent and penalty weight.
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
# Partial alignments kept per candidate token.
METEOR_BEAM_WIDTH = 128


def clipped_overlap(candidate: Sequence[str], reference: Sequence[str]) -> int:
    """Unigram matches with each candidate count clipped by the reference count."""
    return sum((Counter(candidate) & Counter(reference)).values())


def bleu1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Clipped unigram precision times the brevity penalty min(1, exp(1 - |r| / |c|))."""
    if not candidate:
        return 0.0
    precision = clipped_overlap(candidate, reference) / len(candidate)
    brevity = min(1.0, math.exp(1.0 - len(reference) / len(candidate)))
    return precision * brevity


def rouge1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """F1 over clipped unigram overlap."""
    overlap = clipped_overlap(candidate, reference)
    if overlap == 0:
        return 0.0
    return 2.0 * overlap / (len(candidate) + len(reference))


def rougeL(candidate: Sequence[str], reference: Sequence[str]) -> float:  # noqa: N802
    """ROUGE-L F1; identical to the deduplication similarity."""
    return rouge_l_sim(candidate, reference)


def min_chunks(
    candidate: Sequence[str],
    reference: Sequence[str],
    beam_width: int = METEOR_BEAM_WIDTH,
) -> tuple[int, int]:
    """
    Exact-match alignment with the most matches and, among those, the fewest chunks.

    A chunk is a maximal run of matches adjacent in both sequences. Candidate tokens
    are aligned left to right; a token is left unmatched only while its candidate
    count exceeds its reference count, so every partial alignment completes with the
    most matches. Partial alignments are keyed on (used reference positions, previous
    reference position) and at most ``beam_width`` survive each step, ranked by
    chunks so far, then open runs first, then the smaller used-position set. The
    result is exact while no step overflows the beam and an upper bound otherwise.

    Returns:
        (matches, chunks)
    """
    if beam_width < 1:
        raise ContractError(f"beam_width must be positive, got {beam_width}")
    matches = clipped_overlap(candidate, reference)
    if matches == 0:
        return 0, 0

    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        positions.setdefault(tok, []).append(j)
    type_mask = {tok: sum(1 << j for j in js) for tok, js in positions.items()}
    cand_counts = Counter(candidate)
    ref_counts = Counter(reference)
    skips_allowed = {t: max(0, cand_counts[t] - ref_counts[t]) for t in cand_counts}

    # (used reference positions, previous reference position or -1) -> chunks so far
    beam: dict[tuple[int, int], int] = {(0, -1): 0}
    seen: Counter = Counter()
    for tok in candidate:
        step: dict[tuple[int, int], int] = {}
        for (used, prev_j), chunks in beam.items():
            for j in positions.get(tok, ()):
                if used >> j & 1:
                    continue
                state = (used | 1 << j, j)
                cost = chunks + (0 if prev_j >= 0 and j == prev_j + 1 else 1)
                if cost < step.get(state, cost + 1):
                    step[state] = cost
            skipped = seen[tok] - (used & type_mask.get(tok, 0)).bit_count()
            if skipped < skips_allowed[tok] and chunks < step.get((used, -1), chunks + 1):
                step[(used, -1)] = chunks
        if len(step) > beam_width:
            ranked = sorted(step.items(), key=lambda s: (s[1], s[0][1] < 0, s[0][0], s[0][1]))
            step = dict(ranked[:beam_width])
        beam = step
        seen[tok] += 1
    return matches, min(beam.values())


def meteor_exact(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """
    METEOR with exact unigram matching only.

    Fmean = P * R / (alpha * P + (1 - alpha) * R), penalty = gamma * (chunks / matches) ** beta,
    score = Fmean * (1 - penalty); 0 without matches.
    """
    matches, chunks = min_chunks(candidate, reference)
    if matches == 0:
        return 0.0
    precision = matches / len(candidate)
    recall = matches / len(reference)
    fmean = precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return fmean * (1.0 - penalty)


METRICS = {
    "BLEU-1": bleu1,
    "ROUGE-1": rouge1,
    "ROUGE-L": rougeL,
    "METEOR": meteor_exact,
}
