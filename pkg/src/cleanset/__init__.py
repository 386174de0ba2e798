"""LLM-ensemble cleansing for multi-document summarization corpora.

Chain-of-thought agents classify each source document as relevant or
irrelevant to its reference summary; a (weighted) majority vote decides
removal; humans review the rationales and can override any decision. The
result is a cleansed corpus plus full diagnostics: rule-based audits,
cost accounting, statistics, and confusion matrices.
"""

from .analytics import (
    CostModel,
    CostReport,
    agreement_rate,
    confusion_report,
    corpus_stats,
    plan_cost,
    removal_stats,
)
from .backends import AgentConfig, Annotator, BackendPolicy, RawAnnotation, cache_key, run_ensemble
from .cleanse import OverrideRecord, RemovalLog, apply_decisions
from .corpus import Corpus, Document, DocumentSet, ingest_jsonl, ingest_paired_text, write_jsonl
from .filters import FilterConfig, compute_metrics, evaluate_rules, extractive_fragments
from .prompting import PromptTemplate, build_messages, estimate_tokens, render_target_block
from .verdict import AgentVerdict, EnsembleDecision, parse_verdict, vote

__version__ = "0.1.0"
