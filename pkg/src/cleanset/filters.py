"""Rule-based per-set and per-document quality measurements and corpus audit.

Covers the classic summarization-corpus filters: empty/duplicated/prefix
summaries, length thresholds, compression, and abstractivity. Abstractivity
is ``100 * (1 - coverage)`` where coverage is the fraction of summary tokens
inside extractive fragments found greedily against the concatenated sources.
These rules are report-only by default; enforcement is an explicit opt-in
because the bands flag large parts of a typical multi-document corpus.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field

from .corpus import Corpus, DocumentSet

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize_words(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip leading/trailing punctuation."""
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tokens


def split_sentences(text: str) -> list[str]:
    """Split on '.', '!' or '?' followed by whitespace or end of text.

    Deliberately naive: no abbreviation handling, matching how corpus-level
    sentence counts are usually taken.
    """
    segments = _SENTENCE_SPLIT_RE.split(text)
    return [seg for seg in (s.strip() for s in segments) if seg]


def extractive_fragments(source_tokens: list[str], summary_tokens: list[str]) -> list[list[str]]:
    """Greedy longest-match extraction of shared contiguous token spans.

    Scans the summary left to right; at each position takes the longest
    token run that also appears contiguously in the source, emits it, and
    advances past it (or by one token when there is no match). Fragments
    are disjoint and ordered.
    """
    positions: dict[str, list[int]] = {}
    for j, token in enumerate(source_tokens):
        positions.setdefault(token, []).append(j)

    fragments: list[list[str]] = []
    i = 0
    n, m = len(summary_tokens), len(source_tokens)
    while i < n:
        best = 0
        for j in positions.get(summary_tokens[i], ()):
            length = 1
            while i + length < n and j + length < m and summary_tokens[i + length] == source_tokens[j + length]:
                length += 1
            if length > best:
                best = length
        if best:
            fragments.append(summary_tokens[i : i + best])
            i += best
        else:
            i += 1
    return fragments


def coverage_ratio(source_tokens: list[str], summary_tokens: list[str]) -> float:
    """Fraction of summary tokens contained in extractive fragments."""
    if not summary_tokens:
        return 0.0
    fragments = extractive_fragments(source_tokens, summary_tokens)
    return sum(len(f) for f in fragments) / len(summary_tokens)


@dataclass(frozen=True)
class FilterConfig:
    min_source_sentences: int = 4
    min_source_words: int = 40
    min_summary_words: int = 10
    compression_low: float = 50.0
    compression_high: float = 80.0
    abstractivity_low: float = 10.0
    abstractivity_high: float = 80.0
    prefix_sentences: int = 2

    def __post_init__(self) -> None:
        if not (0 < self.compression_low < self.compression_high):
            raise ValueError("compression bounds must satisfy 0 < low < high")
        if not (0 < self.abstractivity_low < self.abstractivity_high):
            raise ValueError("abstractivity bounds must satisfy 0 < low < high")
        for name in ("min_source_sentences", "min_source_words", "min_summary_words", "prefix_sentences"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FilterMetrics:
    set_id: str
    source_words: int
    source_sentences: int
    summary_words: int
    summary_sentences: int
    coverage: float
    abstractivity_pct: float
    compression_pct: float | None  # None when there are no source words


@dataclass(frozen=True)
class DocumentFlags:
    index: int
    empty_source: bool
    duplicated_source: bool
    source_too_short_sentences: bool
    source_too_short_words: bool


@dataclass(frozen=True)
class FilterFlags:
    set_id: str
    empty_summary: bool
    duplicated_summary: bool
    prefix_summary: bool
    summary_too_short: bool
    compression_below_low: bool
    compression_above_high: bool
    abstractivity_below_low: bool
    abstractivity_above_high: bool
    documents: tuple[DocumentFlags, ...] = ()

    @property
    def compression_out_of_band(self) -> bool:
        return self.compression_below_low or self.compression_above_high

    @property
    def abstractivity_out_of_band(self) -> bool:
        return self.abstractivity_below_low or self.abstractivity_above_high


def concat_sources(doc_set: DocumentSet) -> str:
    return " ".join(d.content for d in doc_set.documents)


def compute_metrics(doc_set: DocumentSet, config: FilterConfig | None = None) -> FilterMetrics:
    """Measure one set: counts, compression, and abstractivity.

    Sources are concatenated with a single space before any word, sentence,
    or fragment computation. Compression is undefined (None) when the
    concatenated sources contain no words.
    """
    source_text = concat_sources(doc_set)
    source_tokens = tokenize_words(source_text)
    summary_tokens = tokenize_words(doc_set.summary)
    coverage = coverage_ratio(source_tokens, summary_tokens)
    compression = None
    if source_tokens:
        compression = 100.0 * (1.0 - len(summary_tokens) / len(source_tokens))
    return FilterMetrics(
        set_id=doc_set.id,
        source_words=len(source_tokens),
        source_sentences=len(split_sentences(source_text)),
        summary_words=len(summary_tokens),
        summary_sentences=len(split_sentences(doc_set.summary)),
        coverage=coverage,
        abstractivity_pct=100.0 * (1.0 - coverage),
        compression_pct=compression,
    )


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _prefix_sentences(text: str, k: int) -> str | None:
    sentences = split_sentences(text)
    if len(sentences) < k:
        return None
    return _normalize(" ".join(sentences[:k])).lower()


def _flags_for_set(
    doc_set: DocumentSet,
    metrics: FilterMetrics,
    config: FilterConfig,
    duplicated_summary: bool,
) -> FilterFlags:
    summary_prefix = _prefix_sentences(doc_set.summary, config.prefix_sentences)
    prefix_summary = False
    if summary_prefix is not None:
        for doc in doc_set.documents:
            if _prefix_sentences(doc.content, config.prefix_sentences) == summary_prefix:
                prefix_summary = True
                break

    seen_contents: set[str] = set()
    doc_flags = []
    for doc in doc_set.documents:
        normalized = _normalize(doc.content)
        duplicated = bool(normalized) and normalized in seen_contents
        if normalized:
            seen_contents.add(normalized)
        doc_flags.append(
            DocumentFlags(
                index=doc.index,
                empty_source=doc.is_blank,
                duplicated_source=duplicated,
                source_too_short_sentences=len(split_sentences(doc.content)) < config.min_source_sentences,
                source_too_short_words=len(tokenize_words(doc.content)) < config.min_source_words,
            )
        )

    return FilterFlags(
        set_id=doc_set.id,
        empty_summary=not doc_set.summary.strip(),
        duplicated_summary=duplicated_summary,
        prefix_summary=prefix_summary,
        summary_too_short=metrics.summary_words < config.min_summary_words,
        compression_below_low=metrics.compression_pct is not None and metrics.compression_pct < config.compression_low,
        compression_above_high=metrics.compression_pct is not None
        and metrics.compression_pct > config.compression_high,
        abstractivity_below_low=metrics.abstractivity_pct < config.abstractivity_low,
        abstractivity_above_high=metrics.abstractivity_pct > config.abstractivity_high,
        documents=tuple(doc_flags),
    )


@dataclass
class AuditReport:
    """Corpus-level audit: rule trip counts plus the familiar averages."""

    set_count: int = 0
    article_count: int = 0
    article_count_clean: int = 0  # non-empty and not duplicated within their set
    counts: dict[str, int] = field(default_factory=dict)
    avg_source_words: float = 0.0
    avg_source_sentences: float = 0.0
    avg_summary_words: float = 0.0
    avg_summary_sentences: float = 0.0
    avg_abstractivity: float = 0.0
    avg_compression: float = 0.0

    ROW_LABELS = (
        "Empty Summary",
        "Duplicated Summary",
        "Prefixes Summary",
        "Empty Source",
        "Duplicated Source",
        "Source < 4 Sentences",
        "Source < 40 Words",
        "Summary < 10 Words",
        "Compression < 50%",
        "Compression > 80%",
        "Abstractivity < 10",
        "Abstractivity > 80",
    )

    def to_dict(self) -> dict:
        return {
            "dataset_size": self.set_count,
            "source_article_size": self.article_count,
            "source_article_size_clean": self.article_count_clean,
            "avg_words_in_source": self.avg_source_words,
            "avg_sentences_in_source": self.avg_source_sentences,
            "avg_words_in_summary": self.avg_summary_words,
            "avg_sentences_in_summary": self.avg_summary_sentences,
            "rule_counts": dict(self.counts),
            "avg_abstractivity": self.avg_abstractivity,
            "avg_compression": self.avg_compression,
        }

    def to_table(self) -> str:
        rows = [
            ("Dataset Size", f"{self.set_count:,}"),
            ("Source Article Size", f"{self.article_count:,}"),
            ("Avg Words in Source", f"{self.avg_source_words:.2f}"),
            ("Avg Sentences in Source", f"{self.avg_source_sentences:.2f}"),
            ("Avg Words in Summary", f"{self.avg_summary_words:.2f}"),
            ("Avg Sentences in Summary", f"{self.avg_summary_sentences:.2f}"),
        ]
        rows += [(label, f"{self.counts.get(label, 0):,}") for label in self.ROW_LABELS]
        rows += [
            ("Avg Abstractivity", f"{self.avg_abstractivity:.2f}"),
            ("Avg Compression", f"{self.avg_compression:.2f}%"),
        ]
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)


def evaluate_rules(corpus: Corpus, config: FilterConfig | None = None) -> tuple[list[FilterFlags], AuditReport]:
    """Flag every set and document and build the corpus audit table."""
    config = config or FilterConfig()
    metrics_by_set = {s.id: compute_metrics(s, config) for s in corpus}

    summary_counts: dict[str, int] = {}
    for s in corpus:
        key = _normalize(s.summary).lower()
        summary_counts[key] = summary_counts.get(key, 0) + 1
    seen_summaries: set[str] = set()

    all_flags: list[FilterFlags] = []
    for s in corpus:
        key = _normalize(s.summary).lower()
        duplicated_summary = key in seen_summaries
        seen_summaries.add(key)
        all_flags.append(_flags_for_set(s, metrics_by_set[s.id], config, duplicated_summary))

    report = AuditReport(set_count=len(corpus))
    counts = {label: 0 for label in AuditReport.ROW_LABELS}
    compressions = []
    for s, flags in zip(corpus, all_flags):
        m = metrics_by_set[s.id]
        report.article_count += len(s.documents)
        report.article_count_clean += sum(
            1 for df in flags.documents if not df.empty_source and not df.duplicated_source
        )
        counts["Empty Summary"] += flags.empty_summary
        counts["Duplicated Summary"] += flags.duplicated_summary
        counts["Prefixes Summary"] += flags.prefix_summary
        counts["Summary < 10 Words"] += flags.summary_too_short
        counts["Compression < 50%"] += flags.compression_below_low
        counts["Compression > 80%"] += flags.compression_above_high
        counts["Abstractivity < 10"] += flags.abstractivity_below_low
        counts["Abstractivity > 80"] += flags.abstractivity_above_high
        counts["Empty Source"] += sum(df.empty_source for df in flags.documents)
        counts["Duplicated Source"] += sum(df.duplicated_source for df in flags.documents)
        counts["Source < 4 Sentences"] += sum(df.source_too_short_sentences for df in flags.documents)
        counts["Source < 40 Words"] += sum(df.source_too_short_words for df in flags.documents)
        if m.compression_pct is not None:
            compressions.append(m.compression_pct)
    report.counts = counts

    if corpus.sets:
        n = len(corpus)
        report.avg_source_words = sum(m.source_words for m in metrics_by_set.values()) / n
        report.avg_source_sentences = sum(m.source_sentences for m in metrics_by_set.values()) / n
        report.avg_summary_words = sum(m.summary_words for m in metrics_by_set.values()) / n
        report.avg_summary_sentences = sum(m.summary_sentences for m in metrics_by_set.values()) / n
        report.avg_abstractivity = sum(m.abstractivity_pct for m in metrics_by_set.values()) / n
    if compressions:
        report.avg_compression = sum(compressions) / len(compressions)
    return all_flags, report


def enforce_rules(corpus: Corpus, all_flags: list[FilterFlags]) -> Corpus:
    """Remove rule-flagged documents and quarantine rule-flagged sets.

    Documents flagged empty or duplicated-within-set are dropped (surviving
    documents are reindexed); sets whose summary trips a rule (empty,
    duplicated, prefix, too short) move to quarantine with their documents
    intact. Band rules (compression/abstractivity) stay report-only even
    here: they describe the corpus rather than identify defects.
    """
    from .corpus import make_set

    flags_by_set = {f.set_id: f for f in all_flags}
    new_sets = []
    for s in corpus:
        flags = flags_by_set.get(s.id)
        if flags is None:
            new_sets.append(s)
            continue
        if flags.empty_summary or flags.duplicated_summary or flags.prefix_summary or flags.summary_too_short:
            new_sets.append(make_set(s.id, "quarantine", s.summary, [d.content for d in s.documents]))
            continue
        doc_flags = {df.index: df for df in flags.documents}
        survivors = [
            d.content
            for d in s.documents
            if not (doc_flags[d.index].empty_source or doc_flags[d.index].duplicated_source)
        ]
        if survivors:
            new_sets.append(make_set(s.id, s.split, s.summary, survivors))
        else:
            new_sets.append(make_set(s.id, "quarantine", s.summary, [d.content for d in s.documents]))
    return Corpus(sets=tuple(new_sets), source=corpus.source, format=corpus.format)
