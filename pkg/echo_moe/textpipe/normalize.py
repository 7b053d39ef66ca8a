"""Tokenization shared by deduplication and evaluation metrics."""

import re
import unicodedata

_WORD = re.compile(r"\w+")


def normalize(text: str) -> list[str]:
    """NFC, lowercase, split on whitespace and punctuation; empty tokens never appear."""
    return _WORD.findall(unicodedata.normalize("NFC", text).lower())


def char_tokens(text: str) -> list[str]:
    """Character-level tokens: every word character of the normalized text."""
    return [c for token in normalize(text) for c in token]
