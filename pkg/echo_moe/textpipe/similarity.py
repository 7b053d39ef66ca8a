"""
Sequence similarity: LCS-based ROUGE-L and 64-bit Simhash signatures.
"""

from collections.abc import Sequence

from simhash import Simhash

from ..numerics.rng import fnv1a_64

SIGNATURE_BITS = 64


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence, O(len(a) * len(b)) time, O(len(b)) memory."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sim(a: Sequence[str], b: Sequence[str]) -> float:
    """
    ROUGE-L F1 between two token sequences.

    P = LCS / len(a), R = LCS / len(b), F1 = 2PR / (P + R); 0 when either side is
    empty or nothing is shared. Symmetric in its arguments.
    """
    lcs = lcs_length(a, b)
    if lcs == 0:
        return 0.0
    # 2PR / (P + R) reduces to 2 * lcs / (|a| + |b|)
    return 2.0 * lcs / (len(a) + len(b))


def fnv1a_digest(data: bytes) -> bytes:
    """FNV-1a as an 8-byte big-endian digest, the hash function of every signature."""
    return fnv1a_64(data).to_bytes(8, "big")


def simhash_features(tokens: Sequence[str]) -> list[str]:
    """Distinct unigrams and space-joined adjacent bigrams, in first-seen order."""
    grams = list(tokens) + [f"{x} {y}" for x, y in zip(tokens, tokens[1:])]
    return list(dict.fromkeys(grams))


def simhash_signature(tokens: Sequence[str]) -> Simhash:
    """
    64-bit Simhash over unigram and bigram features with unit weights.

    A bit is set when more than half of the features set it in their FNV-1a hash;
    the empty token list gives the zero signature.
    """
    features = simhash_features(tokens)
    if not features:
        return Simhash(0, f=SIGNATURE_BITS)
    return Simhash(features, f=SIGNATURE_BITS, hashfunc=fnv1a_digest)


def simhash64(tokens: Sequence[str]) -> int:
    """Integer value of :func:`simhash_signature`."""
    return int(simhash_signature(tokens).value)


def as_signature(value: int | Simhash) -> Simhash:
    if isinstance(value, Simhash):
        return value
    return Simhash(int(value), f=SIGNATURE_BITS)


def hamming(a: int | Simhash, b: int | Simhash) -> int:
    """Number of differing bits between two signatures."""
    return as_signature(a).distance(as_signature(b))
