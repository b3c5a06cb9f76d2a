"""MetaQA-style question files: ``question with [topic]<TAB>answer1|answer2``."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .kg import KnowledgeGraph

log = logging.getLogger(__name__)


class QAFormatError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class QAExample:
    question: str  # as written in the file, brackets included
    topic: str
    answers: tuple[str, ...]

    @property
    def text(self) -> str:
        """The question with the topic brackets removed."""
        return self.question.replace("[", "").replace("]", "")

    def to_line(self) -> str:
        return f"{self.question}\t{'|'.join(self.answers)}"


def parse_qa_line(line: str, lineno: int = 0) -> QAExample:
    if "\t" not in line:
        raise QAFormatError("missing tab between question and answers", lineno)
    question, answers = line.split("\t", 1)
    start, end = question.find("["), question.find("]")
    if start < 0 or end < start:
        raise QAFormatError("missing [bracketed] topic mention", lineno)
    topic = question[start + 1:end].strip()
    if not topic:
        raise QAFormatError("empty topic mention", lineno)
    parsed = tuple(a.strip() for a in answers.split("|") if a.strip())
    if not parsed:
        raise QAFormatError("no answers", lineno)
    return QAExample(question.strip(), topic, parsed)


def load_qa_dataset(path: str | Path) -> list[QAExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if line.strip():
                out.append(parse_qa_line(line, lineno))
    return out


def write_qa_dataset(examples: Iterable[QAExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_line() + "\n")


@dataclass(frozen=True)
class ResolvedExample:
    index: int
    example: QAExample
    topic_id: int
    answer_ids: frozenset


def resolve(examples: Sequence[QAExample], kg: KnowledgeGraph) -> tuple[list[ResolvedExample], int]:
    """Map topics and answers to entity ids; returns (resolved, skipped count).

    An example is skipped when its topic is unknown or none of its answers
    (other than the topic itself) is a known entity.
    """
    resolved, skipped = [], 0
    for i, ex in enumerate(examples):
        if not kg.has_entity(ex.topic):
            skipped += 1
            continue
        topic = kg.entity_id(ex.topic)
        answers = frozenset(kg.entity_id(a) for a in ex.answers if kg.has_entity(a)) - {topic}
        if not answers:
            skipped += 1
            continue
        resolved.append(ResolvedExample(i, ex, topic, answers))
    if skipped:
        log.warning("skipped %d of %d examples with unresolvable topic or answers", skipped, len(examples))
    return resolved, skipped
