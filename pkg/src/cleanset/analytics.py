"""Corpus statistics, removal percentages, confusion/agreement, and cost reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .corpus import Corpus
from .filters import split_sentences, tokenize_words

KEPT = "kept"
REMOVED = "removed"
RELEVANT = "relevant"
IRRELEVANT = "irrelevant"


@dataclass
class SplitStats:
    sets: int = 0
    articles: int = 0
    histogram: dict[int, int] = field(default_factory=dict)
    avg_source_words: float = 0.0
    avg_source_sentences: float = 0.0
    avg_summary_words: float = 0.0
    avg_summary_sentences: float = 0.0

    def to_dict(self) -> dict:
        return {
            "sets": self.sets,
            "articles": self.articles,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "avg_source_words": self.avg_source_words,
            "avg_source_sentences": self.avg_source_sentences,
            "avg_summary_words": self.avg_summary_words,
            "avg_summary_sentences": self.avg_summary_sentences,
        }


@dataclass
class StatsReport:
    """Per-split counts and histograms; quarantine is reported separately."""

    splits: dict[str, SplitStats] = field(default_factory=dict)
    total: SplitStats = field(default_factory=SplitStats)
    quarantine: SplitStats = field(default_factory=SplitStats)

    def to_dict(self) -> dict:
        return {
            "splits": {name: s.to_dict() for name, s in sorted(self.splits.items())},
            "total": self.total.to_dict(),
            "quarantine": self.quarantine.to_dict(),
        }


def _accumulate(stats: SplitStats, doc_count: int) -> None:
    stats.sets += 1
    stats.articles += doc_count
    stats.histogram[doc_count] = stats.histogram.get(doc_count, 0) + 1


def corpus_stats(corpus: Corpus, with_averages: bool = True) -> StatsReport:
    """Count sets/articles per split and build the documents-per-set histogram."""
    report = StatsReport()
    sums: dict[str, list[float]] = {}
    for s in corpus:
        target = report.quarantine if s.split == "quarantine" else report.splits.setdefault(s.split, SplitStats())
        _accumulate(target, len(s.documents))
        if s.split != "quarantine":
            _accumulate(report.total, len(s.documents))
        if with_averages:
            source_text = " ".join(d.content for d in s.documents)
            acc = sums.setdefault(s.split, [0.0, 0.0, 0.0, 0.0, 0.0])
            acc[0] += len(tokenize_words(source_text))
            acc[1] += len(split_sentences(source_text))
            acc[2] += len(tokenize_words(s.summary))
            acc[3] += len(split_sentences(s.summary))
            acc[4] += 1
    if with_averages:
        total_acc = [0.0, 0.0, 0.0, 0.0, 0.0]
        for split, acc in sums.items():
            stats = report.quarantine if split == "quarantine" else report.splits[split]
            stats.avg_source_words = acc[0] / acc[4]
            stats.avg_source_sentences = acc[1] / acc[4]
            stats.avg_summary_words = acc[2] / acc[4]
            stats.avg_summary_sentences = acc[3] / acc[4]
            if split != "quarantine":
                for i in range(5):
                    total_acc[i] += acc[i]
        if total_acc[4]:
            report.total.avg_source_words = total_acc[0] / total_acc[4]
            report.total.avg_source_sentences = total_acc[1] / total_acc[4]
            report.total.avg_summary_words = total_acc[2] / total_acc[4]
            report.total.avg_summary_sentences = total_acc[3] / total_acc[4]
    return report


def _pct_removed(before: int, after: int) -> float | None:
    if before == 0:
        return None
    return 100.0 * (before - after) / before


@dataclass
class RemovalStats:
    per_split: dict[str, dict[str, float | None]]
    total_sets_pct: float | None
    total_articles_pct: float | None

    def to_dict(self) -> dict:
        return {
            "per_split": self.per_split,
            "total_sets_pct": self.total_sets_pct,
            "total_articles_pct": self.total_articles_pct,
        }


def removal_stats(before: StatsReport, after: StatsReport) -> RemovalStats:
    """Per-split and overall removal percentages for sets and articles."""
    per_split: dict[str, dict[str, float | None]] = {}
    for split, b in before.splits.items():
        a = after.splits.get(split, SplitStats())
        if a.sets > b.sets or a.articles > b.articles:
            raise ValueError(f"split {split!r}: 'after' exceeds 'before'")
        per_split[split] = {
            "sets_pct": _pct_removed(b.sets, a.sets),
            "articles_pct": _pct_removed(b.articles, a.articles),
        }
    if after.total.sets > before.total.sets or after.total.articles > before.total.articles:
        raise ValueError("'after' totals exceed 'before' totals")
    return RemovalStats(
        per_split=per_split,
        total_sets_pct=_pct_removed(before.total.sets, after.total.sets),
        total_articles_pct=_pct_removed(before.total.articles, after.total.articles),
    )


@dataclass(frozen=True)
class ConfusionReport:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float | None:
        denom = self.tp + self.fp
        return self.tp / denom if denom else None

    @property
    def recall(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom else None

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
        }


def confusion_report(
    decision_labels: Mapping[tuple[str, int], str],
    human_labels: Mapping[tuple[str, int], str],
) -> ConfusionReport:
    """Confusion matrix with positive = relevant/kept.

    TP: kept and relevant; TN: removed and irrelevant; FP: kept but
    irrelevant; FN: relevant but removed.
    """
    if set(decision_labels) != set(human_labels):
        missing = set(decision_labels) ^ set(human_labels)
        raise ValueError(f"label maps must cover the same keys; {len(missing)} keys differ")
    tp = fp = tn = fn = 0
    for key, decided in decision_labels.items():
        if decided not in (KEPT, REMOVED):
            raise ValueError(f"{key}: decision label must be kept/removed, got {decided!r}")
        truth = human_labels[key]
        if truth not in (RELEVANT, IRRELEVANT):
            raise ValueError(f"{key}: human label must be relevant/irrelevant, got {truth!r}")
        if decided == KEPT and truth == RELEVANT:
            tp += 1
        elif decided == KEPT and truth == IRRELEVANT:
            fp += 1
        elif decided == REMOVED and truth == IRRELEVANT:
            tn += 1
        else:
            fn += 1
    return ConfusionReport(tp=tp, fp=fp, tn=tn, fn=fn)


def agreement_rate(reviewed: int, correct: int) -> float | None:
    """Fraction of reviewed machine decisions confirmed correct."""
    if not 0 <= correct <= reviewed:
        raise ValueError(f"need 0 <= correct <= reviewed, got correct={correct}, reviewed={reviewed}")
    if reviewed == 0:
        return None
    return correct / reviewed


def format_pct(ratio: float | None) -> str:
    """Render a ratio as a percentage with one decimal, or n/a."""
    if ratio is None:
        return "n/a"
    return f"{100.0 * ratio:.1f}%"


# -- cost accounting --


@dataclass(frozen=True)
class CostModel:
    price_per_1k_input: float
    price_per_1k_output: float

    def __post_init__(self) -> None:
        if self.price_per_1k_input < 0 or self.price_per_1k_output < 0:
            raise ValueError("prices must be non-negative")

    def call_cost(self, input_tokens: int, output_tokens: int) -> float:
        return input_tokens / 1000.0 * self.price_per_1k_input + output_tokens / 1000.0 * self.price_per_1k_output


# GPT-3.5-turbo-0125 list prices per 1K tokens.
DEFAULT_COST_MODEL = CostModel(price_per_1k_input=0.0005, price_per_1k_output=0.0015)


@dataclass
class CostReport:
    total_input_tokens: int = 0
    total_output_tokens: int = 0
    total_usd: float = 0.0
    calls: int = 0
    per_agent_usd: dict[int, float] = field(default_factory=dict)
    per_set_usd: dict[str, float] = field(default_factory=dict)

    @property
    def avg_cost_per_call(self) -> float:
        return self.total_usd / self.calls if self.calls else 0.0

    @property
    def avg_cost_per_set(self) -> float:
        return self.total_usd / len(self.per_set_usd) if self.per_set_usd else 0.0

    def to_dict(self) -> dict:
        return {
            "total_input_tokens": self.total_input_tokens,
            "total_output_tokens": self.total_output_tokens,
            "total_usd": self.total_usd,
            "calls": self.calls,
            "avg_cost_per_call": self.avg_cost_per_call,
            "avg_cost_per_set": self.avg_cost_per_set,
            "per_agent_usd": {str(k): v for k, v in sorted(self.per_agent_usd.items())},
            "per_set_usd": dict(sorted(self.per_set_usd.items())),
        }


def cost_report(entries: Iterable, model: CostModel) -> CostReport:
    """Aggregate dollar cost from annotation log entries.

    Accepts any objects with set_id, agent_id, input_tokens, output_tokens.
    """
    report = CostReport()
    for entry in entries:
        cost = model.call_cost(entry.input_tokens, entry.output_tokens)
        report.total_input_tokens += entry.input_tokens
        report.total_output_tokens += entry.output_tokens
        report.total_usd += cost
        report.calls += 1
        report.per_agent_usd[entry.agent_id] = report.per_agent_usd.get(entry.agent_id, 0.0) + cost
        report.per_set_usd[entry.set_id] = report.per_set_usd.get(entry.set_id, 0.0) + cost
    return report


@dataclass(frozen=True)
class CostPlan:
    cost_per_agent_call: float
    cost_per_set: float
    cost_total: float
    n_agents: int
    n_sets: int

    def to_dict(self) -> dict:
        return {
            "cost_per_agent_call": self.cost_per_agent_call,
            "cost_per_set": self.cost_per_set,
            "cost_total": self.cost_total,
            "n_agents": self.n_agents,
            "n_sets": self.n_sets,
        }


def plan_cost(
    model: CostModel,
    n_agents: int,
    n_sets: int,
    avg_input_tokens: int = 3500,
    avg_output_tokens: int = 100,
) -> CostPlan:
    """Estimate a run's cost from average token usage before spending anything."""
    per_call = model.call_cost(avg_input_tokens, avg_output_tokens)
    return CostPlan(
        cost_per_agent_call=per_call,
        cost_per_set=per_call * n_agents,
        cost_total=per_call * n_agents * n_sets,
        n_agents=n_agents,
        n_sets=n_sets,
    )
