"""Corpus domain types and JSONL / paired-text ingestion and serialization.

A corpus is a list of document sets; each set pairs one reference summary
with an ordered list of source documents. Document content is stored
verbatim (no trimming) so that downstream emptiness checks see the data
as it was distributed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

SPLITS = ("train", "validation", "test", "quarantine")
DEFAULT_SEPARATOR = "|||||"

QUARANTINE_SUFFIX = ".quarantine.jsonl"


class CorpusError(ValueError):
    """Raised for malformed records, duplicate ids, or parallel-file mismatches."""


@dataclass(frozen=True)
class Document:
    """One source document, 1-indexed within its set."""

    index: int
    content: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise CorpusError(f"document index must be >= 1, got {self.index}")

    @property
    def char_count(self) -> int:
        return len(self.content)

    @property
    def is_blank(self) -> bool:
        """True when the content is empty or whitespace-only."""
        return not self.content.strip()


@dataclass(frozen=True)
class DocumentSet:
    """One summary plus its ordered source documents; the unit of annotation."""

    id: str
    split: str
    summary: str
    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r} for set {self.id!r}")
        indices = [d.index for d in self.documents]
        if indices != list(range(1, len(indices) + 1)):
            raise CorpusError(f"set {self.id!r}: document indices must be contiguous 1..n, got {indices}")
        if not self.documents and self.split != "quarantine":
            raise CorpusError(f"set {self.id!r}: empty document list is only allowed in quarantine")

    @property
    def doc_count(self) -> int:
        return len(self.documents)


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of document sets with unique ids."""

    sets: tuple[DocumentSet, ...]
    source: str = "<memory>"
    format: str = "memory"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.sets:
            if s.id in seen:
                raise CorpusError(f"duplicate set id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.sets)

    def __iter__(self) -> Iterator[DocumentSet]:
        return iter(self.sets)

    def get(self, set_id: str) -> DocumentSet | None:
        for s in self.sets:
            if s.id == set_id:
                return s
        return None

    def by_split(self, split: str) -> list[DocumentSet]:
        return [s for s in self.sets if s.split == split]


def make_set(set_id: str, split: str, summary: str, documents: Iterable[str]) -> DocumentSet:
    """Build a DocumentSet from raw document texts, assigning indices 1..n."""
    docs = tuple(Document(index=i, content=text) for i, text in enumerate(documents, start=1))
    return DocumentSet(id=set_id, split=split, summary=summary, documents=docs)


def ingest_jsonl(lines: Iterable[str], split_default: str, source: str = "<stream>") -> Corpus:
    """Parse record-per-line JSON into a Corpus.

    Each record needs ``summary`` and ``documents``; ``id`` and ``split`` are
    optional. A missing id is synthesized as ``<split>-<line-number>`` and a
    missing split falls back to ``split_default``. Malformed records and
    duplicate explicit ids raise CorpusError naming the offending line.
    """
    if split_default not in SPLITS:
        raise CorpusError(f"unknown default split {split_default!r}")
    sets: list[DocumentSet] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise CorpusError(f"line {lineno}: record must be an object")
        try:
            summary = record["summary"]
            documents = record["documents"]
        except KeyError as exc:
            raise CorpusError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
        if not isinstance(summary, str):
            raise CorpusError(f"line {lineno}: summary must be a string")
        if not isinstance(documents, list) or not all(isinstance(d, str) for d in documents):
            raise CorpusError(f"line {lineno}: documents must be an array of strings")
        split = record.get("split", split_default)
        if split not in SPLITS:
            raise CorpusError(f"line {lineno}: unknown split {split!r}")
        set_id = record.get("id")
        if set_id is None:
            set_id = f"{split}-{lineno}"
        elif not isinstance(set_id, str):
            raise CorpusError(f"line {lineno}: id must be a string")
        if set_id in seen_ids:
            raise CorpusError(f"line {lineno}: duplicate set id {set_id!r}")
        seen_ids.add(set_id)
        try:
            sets.append(make_set(set_id, split, summary, documents))
        except CorpusError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from exc
    return Corpus(sets=tuple(sets), source=source, format="jsonl")


def ingest_paired_text(
    src_lines: Iterable[str],
    tgt_lines: Iterable[str],
    split: str,
    separator: str = DEFAULT_SEPARATOR,
    source: str = "<stream>",
) -> Corpus:
    """Parse the parallel src/tgt distribution format into a Corpus.

    Line i of the src stream, split on ``separator``, yields the documents of
    set i; line i of the tgt stream is its summary. Empty or whitespace-only
    documents are kept: emptiness is a filter signal, not a load error.
    """
    if not separator:
        raise CorpusError("separator must be non-empty")
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    src = [line.rstrip("\n") for line in src_lines]
    tgt = [line.rstrip("\n") for line in tgt_lines]
    if len(src) != len(tgt):
        raise CorpusError(f"parallel file mismatch: {len(src)} source lines vs {len(tgt)} target lines")
    sets = []
    for i, (src_line, summary) in enumerate(zip(src, tgt), start=1):
        documents = src_line.split(separator)
        sets.append(make_set(f"{split}-{i}", split, summary, documents))
    return Corpus(sets=tuple(sets), source=source, format="paired-text")


def set_to_record(s: DocumentSet) -> dict:
    """Serialize a set with deterministic field order."""
    return {
        "id": s.id,
        "split": s.split,
        "summary": s.summary,
        "documents": [d.content for d in s.documents],
    }


def record_line(s: DocumentSet) -> str:
    return json.dumps(set_to_record(s), ensure_ascii=False) + "\n"


def quarantine_path(destination: Path) -> Path:
    """Sibling file that receives quarantine-split records."""
    name = destination.name
    if name.endswith(".jsonl"):
        name = name[: -len(".jsonl")]
    return destination.with_name(name + QUARANTINE_SUFFIX)


def write_jsonl(corpus: Corpus, destination: str | Path) -> list[Path]:
    """Write the corpus as record-per-line JSON, UTF-8, newline-terminated.

    Quarantine sets go to a sibling ``<name>.quarantine.jsonl`` file so the
    main file stays clean for training/testing while quarantined sets remain
    part of the release. Returns the paths written.
    """
    destination = Path(destination)
    main_sets = [s for s in corpus.sets if s.split != "quarantine"]
    quarantined = [s for s in corpus.sets if s.split == "quarantine"]
    try:
        destination.parent.mkdir(parents=True, exist_ok=True)
        with destination.open("w", encoding="utf-8") as f:
            for s in main_sets:
                f.write(record_line(s))
        written = [destination]
        if quarantined:
            qpath = quarantine_path(destination)
            with qpath.open("w", encoding="utf-8") as f:
                for s in quarantined:
                    f.write(record_line(s))
            written.append(qpath)
    except OSError as exc:
        raise CorpusError(f"cannot write corpus to {destination}: {exc}") from exc
    return written


def read_jsonl_corpus(path: str | Path, split_default: str = "train") -> Corpus:
    """Load a corpus written by write_jsonl, including its quarantine sibling."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        corpus = ingest_jsonl(f, split_default=split_default, source=str(path))
    qpath = quarantine_path(path)
    if qpath.exists():
        with qpath.open("r", encoding="utf-8") as f:
            quarantined = ingest_jsonl(f, split_default="quarantine", source=str(qpath))
        corpus = Corpus(
            sets=corpus.sets + quarantined.sets,
            source=str(path),
            format="jsonl",
        )
    return corpus
