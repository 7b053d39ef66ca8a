"""Byte-level tokenizer: UTF-8 bytes plus begin, separator and end tokens."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from ..base.config import BOS_ID, BYTE_VOCAB, EOS_ID, SEP_ID


class ByteTokenizer:
    """Maps text to byte ids; ids at or above 256 are special tokens."""

    def __init__(self, bos_id: int = BOS_ID, sep_id: int = SEP_ID, eos_id: int = EOS_ID):
        self.bos_id = bos_id
        self.sep_id = sep_id
        self.eos_id = eos_id

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Iterable[int]) -> str:
        """Bytes back to text; special ids are dropped and invalid UTF-8 is replaced."""
        data = bytes(int(i) for i in ids if 0 <= int(i) < BYTE_VOCAB)
        return data.decode("utf-8", errors="replace")

    def prompt_ids(self, prompt: str) -> np.ndarray:
        """Begin token, prompt bytes, separator."""
        return np.array([self.bos_id, *self.encode(prompt), self.sep_id], dtype=np.int64)

    def target_ids(self, response: str) -> np.ndarray:
        """Response bytes followed by the end token."""
        return np.array([*self.encode(response), self.eos_id], dtype=np.int64)
