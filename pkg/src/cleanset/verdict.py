"""Verdict parsing and (weighted) majority voting.

Agents answer with a chain-of-thought rationale that ends in a verdict
clause: either ``None`` or one or more ``Document k`` tokens joined by
``|`` (the requested form), with ``,`` and ``and`` tolerated because live
model output drifts from the requested format. Everything before the
verdict clause is kept verbatim as the rationale for human review.

Voting is a strict weighted majority: a document is noisy iff twice its
accumulated flag weight exceeds the total weight of non-abstaining
agents. Ties keep the document, and unparseable responses abstain (they
shrink the denominator instead of counting as keep-votes).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

PARSE_OK = "ok"
PARSE_NONE = "none"
PARSE_UNPARSEABLE = "unparseable"
PARSE_INVALID_INDEX = "invalid_index"

USABLE_STATUSES = (PARSE_OK, PARSE_NONE)

# Tolerant grammar: "Document 1", "document  2", "Document 1|Document 3",
# "Document 1, Document 2 and Document 4", or a bare "None". The verdict is
# the last such clause in the response.
_DOC_TOKEN = r"documents?\s*(\d+)"
_JOINER = r"(?:\s*(?:\||,|;|and)\s*)+"
_TOLERANT_RE = re.compile(
    rf"(?:{_DOC_TOKEN}(?:{_JOINER}{_DOC_TOKEN})*)|(?:\bnone\b)",
    re.IGNORECASE,
)
_DOC_NUM_RE = re.compile(r"documents?\s*(\d+)", re.IGNORECASE)

# Strict grammar: the response must end with the exact requested form,
# case-sensitive, pipe-joined, no trailing period.
_STRICT_RE = re.compile(r"(?:Document \d+(?:\|Document \d+)*|None)$")


class VoteError(ValueError):
    """Raised when no usable verdicts are available for a set."""


@dataclass(frozen=True)
class AgentVerdict:
    """One agent's parsed decision for a document set."""

    agent_id: int
    flagged: frozenset[int]
    rationale: str
    parse_status: str

    def __post_init__(self) -> None:
        if self.parse_status == PARSE_OK and not self.flagged:
            raise ValueError("status ok requires at least one flagged index")
        if self.parse_status != PARSE_OK and self.flagged:
            raise ValueError(f"status {self.parse_status} must carry no flags")

    @property
    def abstained(self) -> bool:
        return self.parse_status not in USABLE_STATUSES


@dataclass(frozen=True)
class EnsembleDecision:
    """Per-document weighted tallies and the final noisy set for one set."""

    set_id: str
    tallies: Mapping[int, int]
    total_weight: int
    noisy: frozenset[int]
    verdicts: tuple[AgentVerdict, ...] = ()
    rule: str = "strict_weighted_majority"


def parse_verdict(response_text: str, n_docs: int, strict: bool = False) -> AgentVerdict:
    """Parse one agent response into an AgentVerdict.

    The final verdict clause in the text wins; earlier ``Document k``
    mentions belong to the rationale. Indices are deduplicated; any index
    outside ``[1, n_docs]`` invalidates the verdict (``invalid_index``), and
    text with no recognizable clause is ``unparseable``. Both are treated by
    voting as abstentions.
    """
    if n_docs < 1:
        raise ValueError(f"n_docs must be >= 1, got {n_docs}")
    if strict:
        return _parse_strict(response_text, n_docs)

    last = None
    for match in _TOLERANT_RE.finditer(response_text):
        last = match
    if last is None:
        return AgentVerdict(agent_id=0, flagged=frozenset(), rationale=response_text, parse_status=PARSE_UNPARSEABLE)

    rationale = response_text[: last.start()].rstrip()
    clause = last.group(0)
    if clause.lower() == "none":
        return AgentVerdict(agent_id=0, flagged=frozenset(), rationale=rationale, parse_status=PARSE_NONE)

    indices = frozenset(int(m.group(1)) for m in _DOC_NUM_RE.finditer(clause))
    if any(i < 1 or i > n_docs for i in indices):
        return AgentVerdict(agent_id=0, flagged=frozenset(), rationale=rationale, parse_status=PARSE_INVALID_INDEX)
    return AgentVerdict(agent_id=0, flagged=indices, rationale=rationale, parse_status=PARSE_OK)


def _parse_strict(response_text: str, n_docs: int) -> AgentVerdict:
    stripped = response_text.rstrip()
    match = _STRICT_RE.search(stripped)
    if match is None:
        return AgentVerdict(agent_id=0, flagged=frozenset(), rationale=response_text, parse_status=PARSE_UNPARSEABLE)
    rationale = stripped[: match.start()].rstrip()
    clause = match.group(0)
    if clause == "None":
        return AgentVerdict(agent_id=0, flagged=frozenset(), rationale=rationale, parse_status=PARSE_NONE)
    indices = frozenset(int(m.group(1)) for m in _DOC_NUM_RE.finditer(clause))
    if any(i < 1 or i > n_docs for i in indices):
        return AgentVerdict(agent_id=0, flagged=frozenset(), rationale=rationale, parse_status=PARSE_INVALID_INDEX)
    return AgentVerdict(agent_id=0, flagged=indices, rationale=rationale, parse_status=PARSE_OK)


def with_agent(verdict: AgentVerdict, agent_id: int) -> AgentVerdict:
    return AgentVerdict(
        agent_id=agent_id,
        flagged=verdict.flagged,
        rationale=verdict.rationale,
        parse_status=verdict.parse_status,
    )


def vote(
    verdicts: Iterable[AgentVerdict],
    weights: Mapping[int, int] | None = None,
    set_id: str = "",
) -> EnsembleDecision:
    """Combine agent verdicts by strict weighted majority.

    Document i is noisy iff ``2 * tally(i) > total_weight`` where the total
    counts only non-abstaining agents. Agents missing from ``weights``
    default to weight 1. Raises VoteError when every agent abstained.
    """
    verdicts = tuple(verdicts)
    weights = dict(weights or {})
    usable = [v for v in verdicts if not v.abstained]
    if not usable:
        raise VoteError(f"no usable verdicts for set {set_id!r}")

    total_weight = 0
    tallies: dict[int, int] = {}
    for v in usable:
        w = weights.get(v.agent_id, 1)
        if w < 1:
            raise ValueError(f"agent {v.agent_id}: voting weight must be >= 1, got {w}")
        total_weight += w
        for i in v.flagged:
            tallies[i] = tallies.get(i, 0) + w

    noisy = frozenset(i for i, t in tallies.items() if 2 * t > total_weight)
    return EnsembleDecision(
        set_id=set_id,
        tallies=dict(sorted(tallies.items())),
        total_weight=total_weight,
        noisy=noisy,
        verdicts=verdicts,
    )


# -- decisions file I/O --


def decision_to_record(decision: EnsembleDecision) -> dict:
    return {
        "set_id": decision.set_id,
        "tallies": {str(i): t for i, t in sorted(decision.tallies.items())},
        "total_weight": decision.total_weight,
        "noisy": sorted(decision.noisy),
        "per_agent": [
            {
                "agent_id": v.agent_id,
                "status": v.parse_status,
                "flagged": sorted(v.flagged),
                "rationale": v.rationale,
            }
            for v in decision.verdicts
        ],
    }


def decision_from_record(record: dict) -> EnsembleDecision:
    verdicts = tuple(
        AgentVerdict(
            agent_id=entry["agent_id"],
            flagged=frozenset(entry["flagged"]),
            rationale=entry["rationale"],
            parse_status=entry["status"],
        )
        for entry in record.get("per_agent", [])
    )
    return EnsembleDecision(
        set_id=record["set_id"],
        tallies={int(i): t for i, t in record["tallies"].items()},
        total_weight=record["total_weight"],
        noisy=frozenset(record["noisy"]),
        verdicts=verdicts,
    )


def write_decisions(decisions: Iterable[EnsembleDecision], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for d in decisions:
            f.write(json.dumps(decision_to_record(d), ensure_ascii=False) + "\n")


def read_decisions(path: str | Path) -> dict[str, EnsembleDecision]:
    decisions: dict[str, EnsembleDecision] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = decision_from_record(json.loads(line))
            decisions[d.set_id] = d
    return decisions
