"""
Few-shot prompt assembly and the template-echo instruction generator.

Open templates ask the generator for both question and answer, guided by the
examples. Closed templates ask only for questions; the answer is the report
itself so it stays faithful to the source.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

from ..base.base_generator import BaseInstructionGenerator
from .records import InstructionRecord, TemplateClass

logger = logging.getLogger(__name__)

OPEN_INSTRUCTION = (
    "Write a new question about the ultrasound report below and answer it, "
    "following the style of the examples."
)
CLOSED_INSTRUCTION = (
    "Write a new question whose answer is the ultrasound report below, "
    "following the style of the examples."
)

DEFAULT_QUESTIONS = {
    TemplateClass.OPEN: (
        "what do the {modality} ultrasound findings suggest",
        "how should the {modality} lesion be followed up",
    ),
    TemplateClass.CLOSED: (
        "describe the {modality} ultrasound findings",
        "what does the {modality} ultrasound show",
    ),
}


def build_prompt(
    report: str,
    template_class: TemplateClass,
    modality: str,
    examples: Sequence[InstructionRecord] = (),
) -> str:
    """
    Few-shot prompt for one report.

    Args:
        report: Source report text
        template_class: Open or closed template family
        modality: Anatomical tag
        examples: Exemplar records shown before the report

    Returns:
        Prompt text
    """
    template_class = TemplateClass(template_class)
    instruction = OPEN_INSTRUCTION if template_class is TemplateClass.OPEN else CLOSED_INSTRUCTION
    lines = [instruction, ""]
    for i, ex in enumerate(examples, start=1):
        lines.append(f"Example {i}:")
        lines.append(f"Q: {ex.question}")
        if template_class is TemplateClass.OPEN:
            lines.append(f"A: {ex.answer}")
        lines.append("")
    lines.append(f"Anatomy: {modality}" if modality else "Anatomy: unspecified")
    lines.append(f"Report: {report}")
    lines.append("Q:")
    return "\n".join(lines)


class EchoTemplateGenerator(BaseInstructionGenerator):
    """
    Deterministic generator that echoes templates instead of calling a language model.

    Questions come from the examples when given, otherwise from built-in templates.
    Open answers restate the report; closed answers are the report verbatim.
    """

    name = "echo"

    def __init__(self, max_pairs: int = 2, **options: Any):
        """
        Initialize the generator.

        Args:
            max_pairs: Upper bound on pairs produced per report
            **options: Ignored by this generator
        """
        super().__init__(max_pairs=max_pairs, **options)
        self.max_pairs = max_pairs

    def generate(
        self,
        report: str,
        template_class: TemplateClass,
        modality: str,
        examples: Sequence[InstructionRecord] = (),
    ) -> list[tuple[str, str]]:
        self.validate_report(report)
        template_class = TemplateClass(template_class)
        if examples:
            questions = [ex.question for ex in examples]
        else:
            templates = DEFAULT_QUESTIONS[template_class]
            questions = [" ".join(q.format(modality=modality).split()) for q in templates]
        questions = list(dict.fromkeys(questions))[: self.max_pairs]

        if template_class is TemplateClass.CLOSED:
            answer = report
        else:
            answer = f"the report describes {report}"
        logger.debug(f"Echo generator produced {len(questions)} {template_class.value} pairs")
        return [(q, answer) for q in questions]


def generate_records(
    generator: BaseInstructionGenerator,
    reports: Sequence[tuple[str, str, str]],
    examples_per_class: int = 2,
) -> list[InstructionRecord]:
    """
    Run a generator over reports, alternating open and closed templates.

    The most recent records of the same template class are the few-shot examples
    for the next report. Each prompt is logged at DEBUG.

    Args:
        generator: Any registered instruction generator
        reports: (source id, report text, anatomical tag) triples
        examples_per_class: Exemplars shown per prompt

    Returns:
        Records in report order, ids ``<source>-<class>-<n>``
    """
    records: list[InstructionRecord] = []
    history: dict[TemplateClass, list[InstructionRecord]] = {c: [] for c in TemplateClass}
    for i, (source_id, report, modality) in enumerate(reports):
        template_class = TemplateClass.OPEN if i % 2 == 0 else TemplateClass.CLOSED
        examples = history[template_class][-examples_per_class:] if examples_per_class else []
        prompt = build_prompt(report, template_class, modality, examples)
        logger.debug(f"Prompt for {source_id}:\n{prompt}")
        pairs = generator.generate(report, template_class, modality, examples)
        for n, (question, answer) in enumerate(pairs):
            record = InstructionRecord(
                id=f"{source_id}-{template_class.value}-{n}",
                question=question,
                answer=answer,
                template_class=template_class,
                modality=modality,
                source=f"{generator.name}:{source_id}",
            )
            records.append(record)
            history[template_class].append(record)
    logger.info(
        f"Generator {generator.name!r} wrote {len(records)} records for {len(reports)} reports"
    )
    return records
