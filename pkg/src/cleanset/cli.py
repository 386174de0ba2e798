"""Command-line pipeline: ingest, annotate, vote, filter, cleanse, report, review.

Every stage writes a plain-file artifact into the output directory so a
long run can be inspected or resumed mid-flight:

    corpus.jsonl[.quarantine.jsonl]   ingested input
    annotations.jsonl                 append-only annotation log
    cache/                            response cache (resume support)
    decisions.jsonl                   parsed verdicts and vote tallies
    filter_report.json / filter_audit.txt
    cleansed.jsonl[.quarantine.jsonl] + removal_log.jsonl
    stats.json / stats.txt, cost.json
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import analytics, backends, cleanse, corpus, filters, prompting, review, verdict

ARTIFACTS = {
    "corpus": "corpus.jsonl",
    "annotations": "annotations.jsonl",
    "cache": "cache",
    "decisions": "decisions.jsonl",
    "filter_report": "filter_report.json",
    "filter_audit": "filter_audit.txt",
    "cleansed": "cleansed.jsonl",
    "removal_log": "removal_log.jsonl",
    "overrides": "overrides.jsonl",
    "stats": "stats.json",
    "stats_table": "stats.txt",
    "cost": "cost.json",
    "cost_plan": "cost_plan.json",
}


class ConfigError(ValueError):
    """All config problems aggregated into one report."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = problems
        super().__init__("invalid config:\n  - " + "\n  - ".join(problems))


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class PipelineConfig:
    corpus_format: str  # jsonl | paired
    corpus_path: Path | None
    paired_files: list[dict]  # [{src, tgt, split}]
    separator: str
    split_default: str
    agents: list[backends.AgentConfig]
    policy: backends.BackendPolicy
    cost_model: analytics.CostModel
    avg_input_tokens: int
    avg_output_tokens: int
    filter_config: filters.FilterConfig
    out_dir: Path
    prompt_file: Path | None = None
    endpoint: str | None = None
    scripted_responses: Path | None = None
    strict_verdicts: bool = False
    enforce_rules: bool = False

    def artifact(self, name: str) -> Path:
        return self.out_dir / ARTIFACTS[name]

    def template(self) -> prompting.PromptTemplate:
        if self.prompt_file is not None:
            return prompting.load_prompt_file(self.prompt_file)
        return prompting.default_template()

    def backend(self) -> backends.Backend:
        kinds = {a.backend for a in self.agents}
        if kinds == {backends.SCRIPTED}:
            if self.scripted_responses is None:
                raise ConfigError(["scripted agents need backend.scripted_responses"])
            return backends.ScriptedBackend.from_jsonl(self.scripted_responses)
        if self.endpoint is None:
            raise ConfigError(["http-chat agents need backend.endpoint"])
        return backends.HttpChatBackend(self.endpoint)


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_config(path: str | Path, out_dir_override: str | None = None) -> PipelineConfig:
    """Parse and fully validate a config file before any network call."""
    path = Path(path)
    problems: list[str] = []
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"])
    base = path.parent

    corpus_section = raw.get("corpus") or {}
    corpus_format = corpus_section.get("format", "jsonl")
    corpus_path = None
    paired_files: list[dict] = []
    if corpus_format == "jsonl":
        if "path" not in corpus_section:
            problems.append("corpus.path is required for jsonl format")
        else:
            corpus_path = _resolve(base, corpus_section["path"])
            if not corpus_path.exists():
                problems.append(f"corpus.path does not exist: {corpus_path}")
    elif corpus_format == "paired":
        files = corpus_section.get("files") or []
        if not files:
            problems.append("corpus.files is required for paired format")
        for entry in files:
            resolved = {
                "src": _resolve(base, entry.get("src", "")),
                "tgt": _resolve(base, entry.get("tgt", "")),
                "split": entry.get("split", ""),
            }
            for key in ("src", "tgt"):
                if not resolved[key].exists():
                    problems.append(f"corpus file does not exist: {resolved[key]}")
            if resolved["split"] not in corpus.SPLITS:
                problems.append(f"corpus.files split must be one of {corpus.SPLITS}, got {resolved['split']!r}")
            paired_files.append(resolved)
    else:
        problems.append(f"corpus.format must be jsonl or paired, got {corpus_format!r}")

    split_default = corpus_section.get("split_default", "train")
    if split_default not in corpus.SPLITS:
        problems.append(f"corpus.split_default must be one of {corpus.SPLITS}")

    agents = []
    raw_agents = raw.get("agents")
    if raw_agents is None:
        agents = backends.default_agents()
    else:
        for i, entry in enumerate(raw_agents):
            try:
                agents.append(
                    backends.AgentConfig(
                        agent_id=int(entry.get("agent_id", i + 1)),
                        model_name=str(entry.get("model_name", "gpt-3.5-turbo-0125")),
                        temperature=float(entry.get("temperature", 1.0)),
                        weight=int(entry.get("weight", 1)),
                        backend=str(entry.get("backend", backends.HTTP_CHAT)),
                    )
                )
            except (ValueError, TypeError) as exc:
                problems.append(f"agents[{i}]: {exc}")
        ids = [a.agent_id for a in agents]
        if len(set(ids)) != len(ids):
            problems.append(f"agent ids must be unique, got {ids}")
    if not agents and not any(p.startswith("agents[") for p in problems):
        problems.append("at least one agent is required")

    policy = backends.BackendPolicy()
    try:
        policy = backends.BackendPolicy(**(raw.get("policy") or {}))
    except (ValueError, TypeError) as exc:
        problems.append(f"policy: {exc}")

    cost_section = raw.get("cost") or {}
    cost_model = analytics.DEFAULT_COST_MODEL
    try:
        cost_model = analytics.CostModel(
            price_per_1k_input=float(cost_section.get("price_per_1k_input", 0.0005)),
            price_per_1k_output=float(cost_section.get("price_per_1k_output", 0.0015)),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"cost: {exc}")
    avg_input_tokens = int(cost_section.get("avg_input_tokens", 3500))
    avg_output_tokens = int(cost_section.get("avg_output_tokens", 100))

    filter_config = filters.FilterConfig()
    try:
        filter_config = filters.FilterConfig(**(raw.get("filters") or {}))
    except (ValueError, TypeError) as exc:
        problems.append(f"filters: {exc}")

    prompt_file = None
    if raw.get("prompt_file"):
        prompt_file = _resolve(base, raw["prompt_file"])
        if not prompt_file.exists():
            problems.append(f"prompt_file does not exist: {prompt_file}")

    backend_section = raw.get("backend") or {}
    endpoint = backend_section.get("endpoint")
    scripted_responses = None
    if backend_section.get("scripted_responses"):
        scripted_responses = _resolve(base, backend_section["scripted_responses"])
        if not scripted_responses.exists():
            problems.append(f"backend.scripted_responses does not exist: {scripted_responses}")
    if any(a.backend == backends.SCRIPTED for a in agents) and scripted_responses is None:
        problems.append("scripted agents need backend.scripted_responses")
    if any(a.backend == backends.HTTP_CHAT for a in agents) and not endpoint:
        problems.append("http-chat agents need backend.endpoint")

    out_dir = _resolve(base, out_dir_override or raw.get("out_dir", "out"))

    if problems:
        raise ConfigError(problems)
    return PipelineConfig(
        corpus_format=corpus_format,
        corpus_path=corpus_path,
        paired_files=paired_files,
        separator=corpus_section.get("separator", corpus.DEFAULT_SEPARATOR),
        split_default=split_default,
        agents=agents,
        policy=policy,
        cost_model=cost_model,
        avg_input_tokens=avg_input_tokens,
        avg_output_tokens=avg_output_tokens,
        filter_config=filter_config,
        out_dir=out_dir,
        prompt_file=prompt_file,
        endpoint=endpoint,
        scripted_responses=scripted_responses,
    )


# -- stages --


def stage_ingest(config: PipelineConfig) -> corpus.Corpus:
    if config.corpus_format == "jsonl":
        loaded = corpus.read_jsonl_corpus(config.corpus_path, split_default=config.split_default)
    else:
        all_sets: list[corpus.DocumentSet] = []
        for entry in config.paired_files:
            with open(entry["src"], "r", encoding="utf-8") as src, open(entry["tgt"], "r", encoding="utf-8") as tgt:
                part = corpus.ingest_paired_text(
                    src, tgt, split=entry["split"], separator=config.separator, source=str(entry["src"])
                )
            all_sets.extend(part.sets)
        loaded = corpus.Corpus(sets=tuple(all_sets), source="paired", format="paired-text")
    config.out_dir.mkdir(parents=True, exist_ok=True)
    corpus.write_jsonl(loaded, config.artifact("corpus"))
    return loaded


def stage_plan_cost(config: PipelineConfig, n_sets: int) -> analytics.CostPlan:
    plan = analytics.plan_cost(
        config.cost_model,
        n_agents=len(config.agents),
        n_sets=n_sets,
        avg_input_tokens=config.avg_input_tokens,
        avg_output_tokens=config.avg_output_tokens,
    )
    config.out_dir.mkdir(parents=True, exist_ok=True)
    config.artifact("cost_plan").write_text(json.dumps(plan.to_dict(), indent=2) + "\n", encoding="utf-8")
    return plan


def stage_annotate(config: PipelineConfig, loaded: corpus.Corpus) -> backends.EnsembleRunResult:
    cache = backends.DiskCache(config.artifact("cache"))
    return backends.run_ensemble(
        loaded,
        agents=config.agents,
        template=config.template(),
        policy=config.policy,
        backend=config.backend(),
        log_path=config.artifact("annotations"),
        cache=cache,
        cost_model=config.cost_model,
    )


def stage_vote(config: PipelineConfig, loaded: corpus.Corpus) -> dict[str, verdict.EnsembleDecision]:
    entries = backends.read_annotation_log(config.artifact("annotations"))
    effective = backends.effective_annotations(entries)
    weights = {a.agent_id: a.weight for a in config.agents}
    decisions: dict[str, verdict.EnsembleDecision] = {}
    for doc_set in loaded:
        if doc_set.split == "quarantine":
            continue
        verdicts = []
        for agent in config.agents:
            entry = effective.get((doc_set.id, agent.agent_id))
            if entry is None or entry.status != backends.STATUS_OK:
                continue
            parsed = verdict.parse_verdict(entry.response_text, len(doc_set.documents), strict=config.strict_verdicts)
            verdicts.append(verdict.with_agent(parsed, agent.agent_id))
        if not verdicts:
            continue
        try:
            decisions[doc_set.id] = verdict.vote(verdicts, weights, set_id=doc_set.id)
        except verdict.VoteError:
            continue  # all abstained: the set stays unannotated
    verdict.write_decisions(decisions.values(), config.artifact("decisions"))
    return decisions


def stage_filter(config: PipelineConfig, loaded: corpus.Corpus) -> tuple[list[filters.FilterFlags], filters.AuditReport]:
    flags, audit = filters.evaluate_rules(loaded, config.filter_config)
    config.artifact("filter_report").write_text(json.dumps(audit.to_dict(), indent=2) + "\n", encoding="utf-8")
    config.artifact("filter_audit").write_text(audit.to_table() + "\n", encoding="utf-8")
    return flags, audit


def stage_cleanse(
    config: PipelineConfig,
    loaded: corpus.Corpus,
    decisions: dict[str, verdict.EnsembleDecision],
) -> corpus.Corpus:
    overrides = cleanse.load_overrides(config.artifact("overrides"))
    cleansed, removal_log = cleanse.apply_decisions(loaded, decisions, overrides)
    if config.enforce_rules:
        flags, _ = filters.evaluate_rules(cleansed, config.filter_config)
        cleansed = filters.enforce_rules(cleansed, flags)
    removal_log.write(config.artifact("removal_log"))
    corpus.write_jsonl(cleansed, config.artifact("cleansed"))
    return cleansed


def stage_stats(config: PipelineConfig, before: corpus.Corpus, after: corpus.Corpus) -> dict:
    before_stats = analytics.corpus_stats(before)
    after_stats = analytics.corpus_stats(after)
    removal = analytics.removal_stats(before_stats, after_stats)
    payload = {
        "before": before_stats.to_dict(),
        "after": after_stats.to_dict(),
        "removal": removal.to_dict(),
    }
    config.artifact("stats").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    config.artifact("stats_table").write_text(_stats_table(before_stats, after_stats, removal) + "\n", encoding="utf-8")
    return payload


def _stats_table(
    before: analytics.StatsReport, after: analytics.StatsReport, removal: analytics.RemovalStats
) -> str:
    lines = [f"{'Split':<12} {'Sets':>9} {'Articles':>9} {'Sets(after)':>12} {'Articles(after)':>15} {'%Sets':>7} {'%Arts':>7}"]
    for split in sorted(before.splits):
        b = before.splits[split]
        a = after.splits.get(split, analytics.SplitStats())
        pct = removal.per_split.get(split, {})
        lines.append(
            f"{split:<12} {b.sets:>9,} {b.articles:>9,} {a.sets:>12,} {a.articles:>15,} "
            f"{_fmt_pct(pct.get('sets_pct')):>7} {_fmt_pct(pct.get('articles_pct')):>7}"
        )
    lines.append(
        f"{'total':<12} {before.total.sets:>9,} {before.total.articles:>9,} "
        f"{after.total.sets:>12,} {after.total.articles:>15,} "
        f"{_fmt_pct(removal.total_sets_pct):>7} {_fmt_pct(removal.total_articles_pct):>7}"
    )
    lines.append(f"quarantine(after): {after.quarantine.sets:,} sets / {after.quarantine.articles:,} articles")
    return "\n".join(lines)


def _fmt_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}%"


def stage_cost(config: PipelineConfig) -> analytics.CostReport:
    entries = backends.effective_annotations(backends.read_annotation_log(config.artifact("annotations")))
    report = analytics.cost_report(entries.values(), config.cost_model)
    config.artifact("cost").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return report


def run_pipeline(config: PipelineConfig, dry_run: bool = False) -> int:
    """Execute ingest, annotate, vote, filter, cleanse, and reports in order."""
    stage = "ingest"
    try:
        loaded = stage_ingest(config)
        print(f"[ingest] {len(loaded)} sets -> {config.artifact('corpus')}")

        stage = "cost-plan"
        n_annotatable = sum(1 for s in loaded if s.split != "quarantine")
        plan = stage_plan_cost(config, n_annotatable)
        print(
            f"[cost-plan] ${plan.cost_per_agent_call:.5f}/agent call, "
            f"${plan.cost_per_set:.4f}/set, ${plan.cost_total:.2f} for {plan.n_sets:,} sets"
        )
        if dry_run:
            print("[dry-run] stopping after cost planning")
            return 0

        stage = "annotate"
        run = stage_annotate(config, loaded)
        print(
            f"[annotate] {run.backend_calls} backend calls, {run.cache_hits} cache hits, "
            f"{len(run.failed_pairs)} failures -> {config.artifact('annotations')}"
        )

        stage = "vote"
        decisions = stage_vote(config, loaded)
        flagged = sum(1 for d in decisions.values() if d.noisy)
        print(f"[vote] {len(decisions)} sets decided, {flagged} with noisy documents")

        stage = "filter"
        _, audit = stage_filter(config, loaded)
        print(f"[filter] audit over {audit.set_count} sets -> {config.artifact('filter_audit')}")

        stage = "cleanse"
        cleansed = stage_cleanse(config, loaded, decisions)
        print(f"[cleanse] -> {config.artifact('cleansed')}")

        stage = "stats"
        stage_stats(config, loaded, cleansed)
        stage = "cost"
        report = stage_cost(config)
        print(f"[cost] ${report.total_usd:.2f} across {report.calls} calls")
        return 0
    except Exception as exc:
        raise StageError(stage, exc) from exc


# -- argument parsing --


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config file (JSON)")
    parser.add_argument("--out-dir", default=None, help="override the config's output directory")
    parser.add_argument("--prompt-file", default=None, help="override the bundled prompt template")
    parser.add_argument("--strict-verdicts", action="store_true", help="only accept the exact verdict grammar")
    parser.add_argument("--enforce-rules", action="store_true", help="also remove rule-flagged documents/sets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cleanset", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full pipeline")
    _add_config_arg(run_p)
    run_p.add_argument("--dry-run", action="store_true", help="stop after cost planning")

    for name, help_text in [
        ("ingest", "ingest the configured corpus and write corpus.jsonl"),
        ("annotate", "run the agent ensemble over the ingested corpus"),
        ("vote", "parse verdicts and compute ensemble decisions"),
        ("filter", "run the rule-based audit"),
        ("cleanse", "apply decisions and overrides"),
        ("stats", "corpus statistics before/after cleansing"),
        ("cost", "cost report from the annotation log"),
    ]:
        stage_p = sub.add_parser(name, help=help_text)
        _add_config_arg(stage_p)

    confusion_p = sub.add_parser("confusion", help="confusion matrix against human labels")
    confusion_p.add_argument("--decisions", required=True, help="decisions.jsonl from the vote stage")
    confusion_p.add_argument("--human-labels", required=True, help="JSONL {set_id, doc_index, label}")

    export_p = sub.add_parser("export", help="apply decisions+overrides and print the corpus")
    _add_config_arg(export_p)

    review_p = sub.add_parser("review", help="human review service")
    review_sub = review_p.add_subparsers(dest="review_command", required=True)
    serve_p = review_sub.add_parser("serve", help="start the review HTTP service")
    serve_p.add_argument("--corpus", required=True)
    serve_p.add_argument("--decisions", required=True)
    serve_p.add_argument("--overrides", required=True)
    serve_p.add_argument("--port", type=int, default=8765)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--ui-dir", default=None, help="directory with the built review UI bundle")
    return parser


def _load(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config, out_dir_override=args.out_dir)
    config.strict_verdicts = getattr(args, "strict_verdicts", False)
    config.enforce_rules = getattr(args, "enforce_rules", False)
    prompt_file = getattr(args, "prompt_file", None)
    if prompt_file:
        config.prompt_file = Path(prompt_file)
    return config


def _require_corpus(config: PipelineConfig) -> corpus.Corpus:
    path = config.artifact("corpus")
    if not path.exists():
        raise StageError("ingest", FileNotFoundError(f"{path} missing; run the ingest stage first"))
    return corpus.read_jsonl_corpus(path)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return run_pipeline(_load(args), dry_run=args.dry_run)
        if args.command == "ingest":
            config = _load(args)
            loaded = stage_ingest(config)
            print(f"{len(loaded)} sets -> {config.artifact('corpus')}")
            return 0
        if args.command == "annotate":
            config = _load(args)
            run = stage_annotate(config, _require_corpus(config))
            print(f"{run.backend_calls} backend calls, {run.cache_hits} cache hits")
            return 0
        if args.command == "vote":
            config = _load(args)
            decisions = stage_vote(config, _require_corpus(config))
            print(f"{len(decisions)} sets decided -> {config.artifact('decisions')}")
            return 0
        if args.command == "filter":
            config = _load(args)
            _, audit = stage_filter(config, _require_corpus(config))
            print(audit.to_table())
            return 0
        if args.command == "cleanse":
            config = _load(args)
            loaded = _require_corpus(config)
            decisions = verdict.read_decisions(config.artifact("decisions"))
            stage_cleanse(config, loaded, decisions)
            print(f"cleansed corpus -> {config.artifact('cleansed')}")
            return 0
        if args.command == "stats":
            config = _load(args)
            loaded = _require_corpus(config)
            cleansed_path = config.artifact("cleansed")
            after = corpus.read_jsonl_corpus(cleansed_path) if cleansed_path.exists() else loaded
            stage_stats(config, loaded, after)
            print(config.artifact("stats_table").read_text(encoding="utf-8"))
            return 0
        if args.command == "cost":
            config = _load(args)
            report = stage_cost(config)
            print(json.dumps(report.to_dict(), indent=2))
            return 0
        if args.command == "confusion":
            return _cmd_confusion(args)
        if args.command == "export":
            config = _load(args)
            loaded = _require_corpus(config)
            decisions = verdict.read_decisions(config.artifact("decisions"))
            overrides = cleanse.load_overrides(config.artifact("overrides"))
            cleansed, _ = cleanse.apply_decisions(loaded, decisions, overrides)
            for s in cleansed:
                sys.stdout.write(corpus.record_line(s))
            return 0
        if args.command == "review" and args.review_command == "serve":
            return _cmd_review_serve(args)
        raise SystemExit(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1


def _cmd_confusion(args: argparse.Namespace) -> int:
    decisions = verdict.read_decisions(args.decisions)
    decision_labels: dict[tuple[str, int], str] = {}
    human_labels: dict[tuple[str, int], str] = {}
    with open(args.human_labels, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            key = (record["set_id"], int(record["doc_index"]))
            human_labels[key] = record["label"]
            decision = decisions.get(record["set_id"])
            if decision is None:
                print(f"no decision for set {record['set_id']!r}", file=sys.stderr)
                return 1
            decision_labels[key] = analytics.REMOVED if key[1] in decision.noisy else analytics.KEPT
    report = analytics.confusion_report(decision_labels, human_labels)
    print(json.dumps(report.to_dict(), indent=2))
    precision = report.precision
    recall = report.recall
    print(f"precision: {'n/a' if precision is None else f'{precision:.4f}'}")
    print(f"recall:    {'n/a' if recall is None else f'{recall:.4f}'}")
    return 0


def _cmd_review_serve(args: argparse.Namespace) -> int:
    loaded = corpus.read_jsonl_corpus(args.corpus)
    decisions = verdict.read_decisions(args.decisions)
    service = review.ReviewService(loaded, decisions, args.overrides)
    server = review.ReviewServer(
        service, host=args.host, port=args.port, ui_dir=args.ui_dir, verbose=True
    )
    print(f"review service listening on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
