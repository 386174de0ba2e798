"""Prompt construction: system + instruction + few-shot CoT exchanges + target block.

The default template ships as a data file with one fully worked example and
two synthetic examples that follow the same verdict grammar (the synthetic
ones exercise the multi-document and the ``None`` forms). Replace it with
``--prompt-file`` for a different prompt.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable

from .corpus import DocumentSet
from .verdict import USABLE_STATUSES, parse_verdict

ROLES = ("system", "user", "assistant")

DEFAULT_PER_MESSAGE_OVERHEAD = 4

TokenCounter = Callable[[str], int]

_DOC_HEADER_RE = re.compile(r"^\[Document (\d+)\]$", re.MULTILINE)

_SECTION_RE = re.compile(r"^### (SYSTEM|INSTRUCTION|SHOT TARGET|SHOT ANSWER)\s*$", re.MULTILINE)


class PromptError(ValueError):
    """Raised for unrenderable sets or invalid prompt templates."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise PromptError(f"unknown role {self.role!r}")
        if not self.content:
            raise PromptError("message content must be non-empty")


@dataclass(frozen=True)
class FewShotExample:
    """A rendered target block paired with the CoT answer an agent should give."""

    target_block: str
    assistant_answer: str

    @property
    def n_docs(self) -> int:
        return len(_DOC_HEADER_RE.findall(self.target_block))


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    instruction_text: str
    shots: tuple[FewShotExample, ...]


def render_target_block(doc_set: DocumentSet) -> str:
    """Render one set as the labeled block the agents classify."""
    if not doc_set.documents:
        raise PromptError(f"set {doc_set.id!r} has no documents to classify")
    parts = ["[Summary]", doc_set.summary]
    for doc in doc_set.documents:
        parts.append(f"[Document {doc.index}]")
        parts.append(doc.content)
    return "\n".join(parts)


def build_messages(template: PromptTemplate, doc_set: DocumentSet) -> list[Message]:
    """Assemble the full message sequence for one set.

    Layout: system, instruction, then one user/assistant exchange per shot,
    then the target block; total length is ``3 + 2 * len(shots)``.
    """
    messages = [
        Message("system", template.system_text),
        Message("user", template.instruction_text),
    ]
    for shot in template.shots:
        messages.append(Message("user", shot.target_block))
        messages.append(Message("assistant", shot.assistant_answer))
    messages.append(Message("user", render_target_block(doc_set)))
    return messages


def heuristic_token_count(text: str) -> int:
    """Offline stand-in for a model tokenizer: one token per 4 characters."""
    return math.ceil(len(text) / 4)


def estimate_tokens(
    messages: Iterable[Message],
    counter: TokenCounter = heuristic_token_count,
    per_message_overhead: int = DEFAULT_PER_MESSAGE_OVERHEAD,
) -> int:
    return sum(counter(m.content) + per_message_overhead for m in messages)


def validate_template(template: PromptTemplate) -> None:
    """Check every shot's answer parses to a usable verdict over its own block.

    Raises PromptError listing all offending shots.
    """
    problems = []
    if not template.system_text.strip():
        problems.append("system text is empty")
    if not template.instruction_text.strip():
        problems.append("instruction text is empty")
    for i, shot in enumerate(template.shots, start=1):
        n_docs = shot.n_docs
        if n_docs == 0:
            problems.append(f"shot {i}: target block has no [Document k] headers")
            continue
        verdict = parse_verdict(shot.assistant_answer, n_docs=n_docs)
        if verdict.parse_status not in USABLE_STATUSES:
            problems.append(f"shot {i}: answer does not end in a parseable verdict ({verdict.parse_status})")
    if problems:
        raise PromptError("invalid prompt template: " + "; ".join(problems))


# -- template file format --
#
# Sectioned plain text: "### SYSTEM", "### INSTRUCTION", then alternating
# "### SHOT TARGET" / "### SHOT ANSWER" pairs. Section bodies are verbatim
# except for leading/trailing blank lines.


def parse_prompt_file(text: str) -> PromptTemplate:
    matches = list(_SECTION_RE.finditer(text))
    if not matches:
        raise PromptError("prompt file has no ### sections")
    sections: list[tuple[str, str]] = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end() : end].strip("\n")
        sections.append((m.group(1), body))

    names = [name for name, _ in sections]
    if names[:2] != ["SYSTEM", "INSTRUCTION"]:
        raise PromptError("prompt file must start with ### SYSTEM then ### INSTRUCTION")
    rest = sections[2:]
    if len(rest) % 2 != 0 or any(
        (name != "SHOT TARGET" if i % 2 == 0 else name != "SHOT ANSWER") for i, (name, _) in enumerate(rest)
    ):
        raise PromptError("shots must be alternating ### SHOT TARGET / ### SHOT ANSWER pairs")

    shots = tuple(
        FewShotExample(target_block=rest[i][1], assistant_answer=rest[i + 1][1]) for i in range(0, len(rest), 2)
    )
    template = PromptTemplate(system_text=sections[0][1], instruction_text=sections[1][1], shots=shots)
    validate_template(template)
    return template


def render_prompt_file(template: PromptTemplate) -> str:
    parts = [f"### SYSTEM\n{template.system_text}", f"### INSTRUCTION\n{template.instruction_text}"]
    for shot in template.shots:
        parts.append(f"### SHOT TARGET\n{shot.target_block}")
        parts.append(f"### SHOT ANSWER\n{shot.assistant_answer}")
    return "\n".join(parts) + "\n"


def load_prompt_file(path: str | Path) -> PromptTemplate:
    return parse_prompt_file(Path(path).read_text(encoding="utf-8"))


def default_template() -> PromptTemplate:
    text = resources.files("cleanset").joinpath("data/default_prompt.txt").read_text(encoding="utf-8")
    return parse_prompt_file(text)
