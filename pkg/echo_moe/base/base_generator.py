"""
Abstract base class for instruction generators.

A generator turns an image caption (the "report") into question/answer
instruction records. The real pipeline calls a large language model here; that
call is outside this package, so concrete generators are plugged in through the
factory's ``echo_moe.generators`` entry-point group.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Sequence
from typing import TYPE_CHECKING, Any

from ..exceptions import DataError

if TYPE_CHECKING:
    from ..textpipe.records import InstructionRecord, TemplateClass


class BaseInstructionGenerator(ABC):
    """Abstract base class for all instruction generator implementations."""

    name: str = "base"

    def __init__(self, **options: Any):
        """Initialize the generator.

        Args:
            **options: Implementation specific options
        """
        self.options = options

    @abstractmethod
    def generate(
        self,
        report: str,
        template_class: TemplateClass,
        modality: str,
        examples: Sequence[InstructionRecord] = (),
    ) -> list[tuple[str, str]]:
        """Produce question/answer pairs for one report.

        Args:
            report: Source caption or report text
            template_class: Open or closed template family
            modality: Anatomical tag of the report
            examples: Few-shot examples shown to the generator

        Returns:
            List of (question, answer) pairs
        """
        pass

    def validate_report(self, report: str) -> None:
        """Validate a report before generation.

        Raises:
            DataError: If the report is empty
        """
        if not report or not report.strip():
            raise DataError("Report text cannot be empty")
