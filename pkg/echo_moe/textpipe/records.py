"""
Instruction records and their JSON-lines form.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..exceptions import DataError, SerializationError
from .normalize import normalize

logger = logging.getLogger(__name__)


class TemplateClass(str, Enum):
    """Template family a question was generated from."""

    OPEN = "open"
    CLOSED = "closed"


class InstructionRecord(BaseModel):
    """One generated question/answer instance."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str = Field(..., min_length=1, description="Unique id within a corpus")
    question: str = Field(..., description="Instruction text")
    answer: str = Field(..., description="Expected response")
    template_class: TemplateClass = Field(default=TemplateClass.OPEN)
    modality: str = Field(default="", description="Anatomical tag")
    source: str = Field(default="", description="Provenance of the record")

    @field_validator("question", "answer")
    @classmethod
    def validate_nonempty(cls, v: str) -> str:
        """Reject text with no tokens after normalization."""
        if not normalize(v):
            raise ValueError("text is empty after normalization")
        return v


def read_records(path: str | Path) -> list[InstructionRecord]:
    """
    Read a JSON-lines file of instruction records.

    Blank lines are skipped.

    Raises:
        DataError: If a line is not UTF-8, not valid JSON or not a valid record; the message
            names the line
        SerializationError: If the file cannot be read
    """
    records = []
    try:
        with open(path, "rb") as f:
            for lineno, raw in enumerate(f, start=1):
                try:
                    line = raw.decode("utf-8")
                    if not line.strip():
                        continue
                    records.append(InstructionRecord.model_validate(json.loads(line)))
                except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as e:
                    raise DataError(f"{path}:{lineno}: malformed record: {e}") from e
    except OSError as e:
        raise SerializationError(f"Failed to read records from {path}: {e}") from e
    logger.debug(f"Read {len(records)} records from {path}")
    return records


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> Path:
    """Write dictionaries as sorted-key JSON lines."""
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as e:
        raise SerializationError(f"Failed to write {out}: {e}") from e
    return out


def write_records(path: str | Path, records: Iterable[InstructionRecord]) -> Path:
    """Write records as JSON lines in the given order."""
    return write_jsonl(path, (r.model_dump(mode="json") for r in records))
