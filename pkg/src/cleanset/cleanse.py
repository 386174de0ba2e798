"""Apply ensemble decisions and human overrides to produce the cleansed corpus.

Human overrides take precedence over the vote; the latest override per
(set, document) wins. Sets left with zero surviving documents move to the
quarantine split but keep their full original document list, so the
released file still carries them for future investigation. Sets that were
never annotated pass through unchanged and are flagged in the removal log
rather than silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Corpus, DocumentSet, make_set
from .verdict import EnsembleDecision

KEEP = "keep"
REMOVE = "remove"

REMOVED_BY_VOTE = "removed_by_vote"
KEPT_BY_VOTE = "kept_by_vote"
KEPT_BY_OVERRIDE = "kept_by_override"
REMOVED_BY_OVERRIDE = "removed_by_override"

REMOVAL_ACTIONS = (REMOVED_BY_VOTE, REMOVED_BY_OVERRIDE)


class CleanseError(ValueError):
    """Raised when decisions or overrides reference unknown sets/documents."""


@dataclass(frozen=True)
class OverrideRecord:
    """A human adjudication for one document."""

    set_id: str
    doc_index: int
    action: str
    reviewer: str
    timestamp: str  # ISO-8601 UTC
    note: str = ""

    def __post_init__(self) -> None:
        if self.action not in (KEEP, REMOVE):
            raise CleanseError(f"override action must be keep/remove, got {self.action!r}")

    def to_record(self) -> dict:
        return {
            "set_id": self.set_id,
            "doc_index": self.doc_index,
            "action": self.action,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
            "note": self.note,
        }

    @classmethod
    def from_record(cls, record: dict) -> OverrideRecord:
        return cls(
            set_id=record["set_id"],
            doc_index=int(record["doc_index"]),
            action=record["action"],
            reviewer=record.get("reviewer", ""),
            timestamp=record["timestamp"],
            note=record.get("note", ""),
        )


def effective_overrides(records: Iterable[OverrideRecord]) -> dict[tuple[str, int], OverrideRecord]:
    """Latest override per (set, document); ties resolve on a total order.

    Using the full (timestamp, action, reviewer, note) tuple keeps replay
    order-insensitive even when two records share a timestamp.
    """
    effective: dict[tuple[str, int], OverrideRecord] = {}
    for rec in records:
        key = (rec.set_id, rec.doc_index)
        current = effective.get(key)
        if current is None or _override_order(rec) > _override_order(current):
            effective[key] = rec
    return effective


def _override_order(rec: OverrideRecord) -> tuple[str, str, str, str]:
    return (rec.timestamp, rec.action, rec.reviewer, rec.note)


def append_override(path: str | Path, record: OverrideRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(record.to_record(), ensure_ascii=False) + "\n")


def load_overrides(path: str | Path) -> list[OverrideRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(OverrideRecord.from_record(json.loads(line)))
    return records


@dataclass(frozen=True)
class RemovalLogEntry:
    set_id: str
    doc_index: int  # original index
    action: str
    tally: int
    total_weight: int
    override: OverrideRecord | None = None

    def to_record(self) -> dict:
        return {
            "set_id": self.set_id,
            "doc_index": self.doc_index,
            "action": self.action,
            "tally": self.tally,
            "total_weight": self.total_weight,
            "override": self.override.to_record() if self.override else None,
        }


@dataclass
class RemovalLog:
    entries: list[RemovalLogEntry] = field(default_factory=list)
    unannotated_set_ids: list[str] = field(default_factory=list)
    quarantined_from: dict[str, str] = field(default_factory=dict)  # set_id -> original split

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            for entry in self.entries:
                f.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")
            for set_id in self.unannotated_set_ids:
                f.write(json.dumps({"set_id": set_id, "unannotated": True}, ensure_ascii=False) + "\n")
            for set_id, split in self.quarantined_from.items():
                f.write(json.dumps({"set_id": set_id, "quarantined_from": split}, ensure_ascii=False) + "\n")


def _validate(
    corpus: Corpus,
    decisions: Mapping[str, EnsembleDecision],
    overrides: Iterable[OverrideRecord],
) -> list[str]:
    sets_by_id = {s.id: s for s in corpus}
    problems = []
    for set_id in decisions:
        if set_id not in sets_by_id:
            problems.append(f"decision for unknown set {set_id!r}")
    for rec in overrides:
        target = sets_by_id.get(rec.set_id)
        if target is None:
            problems.append(f"override for unknown set {rec.set_id!r}")
        elif not 1 <= rec.doc_index <= len(target.documents):
            problems.append(
                f"override for set {rec.set_id!r} names document {rec.doc_index}, "
                f"set has {len(target.documents)}"
            )
        elif rec.set_id not in decisions:
            problems.append(f"override for set {rec.set_id!r} which has no decision")
    return problems


def apply_decisions(
    corpus: Corpus,
    decisions: Mapping[str, EnsembleDecision],
    overrides: Iterable[OverrideRecord] = (),
) -> tuple[Corpus, RemovalLog]:
    """Produce the cleansed corpus and an auditable removal log.

    Every original document of every decided set lands in the log exactly
    once. Surviving documents are reindexed contiguously in their original
    order; non-quarantined sets keep their split label.
    """
    overrides = list(overrides)
    problems = _validate(corpus, decisions, overrides)
    if problems:
        raise CleanseError("; ".join(problems))
    effective = effective_overrides(overrides)

    log = RemovalLog()
    new_sets: list[DocumentSet] = []
    for s in corpus:
        decision = decisions.get(s.id)
        if decision is None:
            new_sets.append(s)
            log.unannotated_set_ids.append(s.id)
            continue
        survivors = []
        for doc in s.documents:
            override = effective.get((s.id, doc.index))
            if override is not None:
                action = KEPT_BY_OVERRIDE if override.action == KEEP else REMOVED_BY_OVERRIDE
            elif doc.index in decision.noisy:
                action = REMOVED_BY_VOTE
            else:
                action = KEPT_BY_VOTE
            log.entries.append(
                RemovalLogEntry(
                    set_id=s.id,
                    doc_index=doc.index,
                    action=action,
                    tally=decision.tallies.get(doc.index, 0),
                    total_weight=decision.total_weight,
                    override=override,
                )
            )
            if action in (KEPT_BY_VOTE, KEPT_BY_OVERRIDE):
                survivors.append(doc.content)
        if survivors:
            new_sets.append(make_set(s.id, s.split, s.summary, survivors))
        else:
            # Quarantined sets keep their original documents in the release;
            # the log remembers which split they came from.
            new_sets.append(make_set(s.id, "quarantine", s.summary, [d.content for d in s.documents]))
            log.quarantined_from[s.id] = s.split
    cleansed = Corpus(sets=tuple(new_sets), source=corpus.source, format=corpus.format)
    return cleansed, log
