from __future__ import annotations

import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cleanset.backends import (
    STATUS_FAILED,
    STATUS_OK,
    AgentConfig,
    Annotator,
    AuthenticationError,
    BackendPolicy,
    BudgetExceededError,
    DiskCache,
    HttpChatBackend,
    MalformedResponseError,
    ScriptedBackend,
    TransientBackendError,
    cache_key,
    default_agents,
    effective_annotations,
    read_annotation_log,
    run_ensemble,
)
from cleanset.analytics import CostModel
from cleanset.prompting import Message, default_template
from conftest import CountingBackend, FlakyBackend, build_planted_corpus, scripted_ensemble

FAST_POLICY = BackendPolicy(
    max_concurrent_requests=4,
    requests_per_minute=10_000_000,
    retry_limit=3,
    backoff_base=0.001,
    backoff_cap=0.01,
)

MESSAGES = [Message("system", "sys"), Message("user", "classify this")]


def _agent(agent_id: int = 1, **kwargs) -> AgentConfig:
    kwargs.setdefault("backend", "scripted")
    return AgentConfig(agent_id=agent_id, **kwargs)


def test_scripted_lookup():
    backend = ScriptedBackend(responses={("s1", 2): "fixture text"})
    annotator = Annotator(backend, policy=FAST_POLICY)
    annotation = annotator.annotate_once(_agent(2), MESSAGES, set_id="s1")
    assert annotation.response_text == "fixture text"
    assert annotation.from_cache is False
    assert annotation.attempt_count == 1
    assert annotation.input_tokens > 0


def test_cache_hit_preserves_attempt_count(tmp_path):
    backend = FlakyBackend(
        ScriptedBackend(responses={("s1", 1): "answer"}),
        failures=1,
        error_factory=lambda: TransientBackendError("429"),
    )
    cache = DiskCache(tmp_path / "cache")
    annotator = Annotator(backend, policy=FAST_POLICY, cache=cache)
    first = annotator.annotate_once(_agent(1), MESSAGES, set_id="s1")
    assert first.attempt_count == 2
    second = annotator.annotate_once(_agent(1), MESSAGES, set_id="s1")
    assert second.from_cache is True
    assert second.attempt_count == 2
    assert second.response_text == first.response_text
    assert annotator.backend_calls == 2  # one failure + one success; cache hit adds none


def test_cache_key_stability_and_sensitivity():
    key = cache_key(MESSAGES, "model-a", 1.0, 1)
    assert key == cache_key(list(MESSAGES), "model-a", 1.0, 1)
    assert key != cache_key(MESSAGES, "model-a", 1.0, 2)  # independent samples per agent
    assert key != cache_key(MESSAGES, "model-a", 0.0, 1)
    assert key != cache_key(MESSAGES, "model-b", 1.0, 1)
    assert key != cache_key([MESSAGES[0], Message("user", "classify that")], "model-a", 1.0, 1)


def test_retry_until_success_counts_attempts():
    backend = FlakyBackend(
        ScriptedBackend(responses={("s1", 1): "ok"}),
        failures=2,
        error_factory=lambda: TransientBackendError("429"),
    )
    annotation = Annotator(backend, policy=FAST_POLICY).annotate_once(_agent(1), MESSAGES, set_id="s1")
    assert annotation.attempt_count == 3


def test_retry_exhaustion_raises():
    backend = FlakyBackend(
        ScriptedBackend(responses={("s1", 1): "ok"}),
        failures=99,
        error_factory=lambda: TransientBackendError("429"),
    )
    with pytest.raises(TransientBackendError):
        Annotator(backend, policy=FAST_POLICY).annotate_once(_agent(1), MESSAGES, set_id="s1")


def test_auth_error_is_not_retried():
    backend = CountingBackend(
        FlakyBackend(
            ScriptedBackend(responses={("s1", 1): "ok"}),
            failures=99,
            error_factory=lambda: AuthenticationError("bad key"),
        )
    )
    with pytest.raises(AuthenticationError):
        Annotator(backend, policy=FAST_POLICY).annotate_once(_agent(1), MESSAGES, set_id="s1")
    assert backend.total_calls == 1


# -- HTTP backend against a local stub --


class _StubChatHandler(BaseHTTPRequestHandler):
    def log_message(self, *args) -> None:
        pass

    def do_POST(self):
        plan = self.server.plan  # type: ignore[attr-defined]
        step = plan.pop(0) if len(plan) > 1 else plan[0]
        length = int(self.headers.get("Content-Length", "0"))
        request_body = json.loads(self.rfile.read(length))
        self.server.requests.append({"auth": self.headers.get("Authorization"), "body": request_body})  # type: ignore[attr-defined]
        if step == "ok":
            body = json.dumps(
                {
                    "choices": [{"message": {"role": "assistant", "content": "Therefore: None"}}],
                    "usage": {"prompt_tokens": 42, "completion_tokens": 7},
                }
            ).encode()
            self.send_response(200)
        elif step == "malformed":
            body = json.dumps({"unexpected": True}).encode()
            self.send_response(200)
        else:
            body = b"{}"
            self.send_response(int(step))
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubChatHandler)
    server.plan = ["ok"]
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


def _http_agent():
    return AgentConfig(agent_id=1, model_name="test-model", temperature=0.7, backend="http-chat")


def test_http_backend_success(stub_server, monkeypatch):
    monkeypatch.setenv("ANNOTATOR_API_KEY", "sk-test")
    backend = HttpChatBackend(f"http://127.0.0.1:{stub_server.server_address[1]}/v1/chat")
    annotation = Annotator(backend, policy=FAST_POLICY).annotate_once(_http_agent(), MESSAGES, set_id="s1")
    assert annotation.response_text == "Therefore: None"
    assert annotation.input_tokens == 42
    assert annotation.output_tokens == 7
    sent = stub_server.requests[0]
    assert sent["auth"] == "Bearer sk-test"
    assert sent["body"]["model"] == "test-model"
    assert sent["body"]["temperature"] == 0.7
    assert sent["body"]["messages"][0] == {"role": "system", "content": "sys"}


def test_http_backend_retries_after_rate_limit(stub_server, monkeypatch):
    monkeypatch.setenv("ANNOTATOR_API_KEY", "sk-test")
    stub_server.plan = ["429", "429", "ok"]
    backend = HttpChatBackend(f"http://127.0.0.1:{stub_server.server_address[1]}/v1/chat")
    annotation = Annotator(backend, policy=FAST_POLICY).annotate_once(_http_agent(), MESSAGES, set_id="s1")
    assert annotation.attempt_count == 3
    assert annotation.response_text == "Therefore: None"


def test_http_backend_auth_failure(stub_server, monkeypatch):
    monkeypatch.setenv("ANNOTATOR_API_KEY", "sk-test")
    stub_server.plan = ["401"]
    backend = HttpChatBackend(f"http://127.0.0.1:{stub_server.server_address[1]}/v1/chat")
    with pytest.raises(AuthenticationError):
        Annotator(backend, policy=FAST_POLICY).annotate_once(_http_agent(), MESSAGES, set_id="s1")


def test_http_backend_missing_credential(monkeypatch):
    monkeypatch.delenv("ANNOTATOR_API_KEY", raising=False)
    backend = HttpChatBackend("http://127.0.0.1:1/unused")
    with pytest.raises(AuthenticationError, match="ANNOTATOR_API_KEY"):
        backend.complete(_http_agent(), MESSAGES, "s1")


def test_http_backend_malformed_response(stub_server, monkeypatch):
    monkeypatch.setenv("ANNOTATOR_API_KEY", "sk-test")
    stub_server.plan = ["malformed"]
    backend = HttpChatBackend(f"http://127.0.0.1:{stub_server.server_address[1]}/v1/chat")
    with pytest.raises(MalformedResponseError):
        Annotator(backend, policy=FAST_POLICY).annotate_once(_http_agent(), MESSAGES, set_id="s1")


# -- ensemble runs --


def _small_run(tmp_path, n_sets=4, n_agents=5, **kwargs):
    corpus, truth = build_planted_corpus(n_sets=n_sets, seed=7, all_noisy_every=0)
    agents, backend = scripted_ensemble(truth, n_agents=n_agents)
    cache = DiskCache(tmp_path / "cache")
    log_path = tmp_path / "annotations.jsonl"
    result = run_ensemble(
        corpus,
        agents=agents,
        template=default_template(),
        policy=kwargs.pop("policy", FAST_POLICY),
        backend=kwargs.pop("backend", backend),
        log_path=log_path,
        cache=cache,
        **kwargs,
    )
    return corpus, truth, agents, backend, result


def test_run_ensemble_cardinality(tmp_path):
    corpus, _, agents, _, result = _small_run(tmp_path)
    entries = read_annotation_log(result.log_path)
    assert len(entries) == 20
    assert all(e.status == STATUS_OK for e in entries)
    pairs = Counter((e.set_id, e.agent_id) for e in entries)
    assert len(pairs) == 20
    assert all(count == 1 for count in pairs.values())
    assert all(len(anns) == len(agents) for anns in result.per_set.values())


def test_rerun_is_served_from_cache(tmp_path):
    corpus, truth, agents, _, first = _small_run(tmp_path)
    assert first.backend_calls == 20
    assert first.cache_hits == 0

    _, backend2 = scripted_ensemble(truth)
    counting = CountingBackend(backend2)
    cache = DiskCache(tmp_path / "cache")
    second = run_ensemble(
        corpus,
        agents=agents,
        template=default_template(),
        policy=FAST_POLICY,
        backend=counting,
        log_path=tmp_path / "annotations.jsonl",
        cache=cache,
    )
    assert counting.total_calls == 0
    assert second.backend_calls == 0
    assert second.cache_hits == 20
    assert len(read_annotation_log(second.log_path)) == 20  # no duplicate appends


def test_log_replay_reconstructs_annotation_multiset(tmp_path):
    _, _, _, _, result = _small_run(tmp_path)
    produced = Counter(
        (set_id, a.agent_id, a.response_text, a.input_tokens, a.output_tokens)
        for set_id, annotations in result.per_set.items()
        for a in annotations
    )
    replayed = Counter(
        (e.set_id, e.agent_id, e.response_text, e.input_tokens, e.output_tokens)
        for e in read_annotation_log(result.log_path)
    )
    assert replayed == produced


def test_single_failing_agent_marks_sets_unannotated(tmp_path):
    corpus, truth = build_planted_corpus(n_sets=3, seed=9, all_noisy_every=0)
    agents = [AgentConfig(agent_id=1, backend="scripted")]
    backend = FlakyBackend(
        ScriptedBackend(responses={}),
        failures=10**9,
        error_factory=lambda: TransientBackendError("always down"),
    )
    result = run_ensemble(
        corpus,
        agents=agents,
        template=default_template(),
        policy=FAST_POLICY,
        backend=backend,
        log_path=tmp_path / "log.jsonl",
    )
    assert sorted(result.unannotated_set_ids) == sorted(s.id for s in corpus)
    entries = read_annotation_log(result.log_path)
    assert len(entries) == 3
    assert all(e.status == STATUS_FAILED for e in entries)


def test_one_failing_agent_of_five_leaves_sets_annotated(tmp_path):
    corpus, truth = build_planted_corpus(n_sets=3, seed=9, all_noisy_every=0)
    agents, inner = scripted_ensemble(truth)

    class AgentFiveDown:
        def complete(self, agent, messages, set_id):
            if agent.agent_id == 5:
                raise TransientBackendError("agent 5 offline")
            return inner.complete(agent, messages, set_id)

    result = run_ensemble(
        corpus,
        agents=agents,
        template=default_template(),
        policy=FAST_POLICY,
        backend=AgentFiveDown(),
        log_path=tmp_path / "log.jsonl",
    )
    assert result.unannotated_set_ids == []
    assert sorted(result.failed_pairs) == [(s.id, 5) for s in corpus]
    assert all(len(v) == 4 for v in result.per_set.values())
    effective = effective_annotations(read_annotation_log(result.log_path))
    assert sum(1 for e in effective.values() if e.status == STATUS_FAILED) == 3


def test_concurrency_never_exceeds_cap(tmp_path):
    corpus, truth = build_planted_corpus(n_sets=6, seed=5, all_noisy_every=0)
    agents, _ = scripted_ensemble(truth)
    counting = CountingBackend(ScriptedBackend(responder=lambda s, a, m: "verdict: None", latency=0.01))
    policy = BackendPolicy(
        max_concurrent_requests=3, requests_per_minute=10_000_000, retry_limit=1, backoff_base=0.001, backoff_cap=0.01
    )
    run_ensemble(
        corpus,
        agents=agents,
        template=default_template(),
        policy=policy,
        backend=counting,
        log_path=tmp_path / "log.jsonl",
    )
    assert counting.total_calls == 30
    assert counting.peak_in_flight <= 3


def test_token_totals_independent_of_concurrency(tmp_path):
    totals = []
    for workers, suffix in ((1, "a"), (4, "b")):
        corpus, truth = build_planted_corpus(n_sets=5, seed=3, all_noisy_every=0)
        agents, backend = scripted_ensemble(truth)
        policy = BackendPolicy(
            max_concurrent_requests=workers,
            requests_per_minute=10_000_000,
            retry_limit=1,
            backoff_base=0.001,
            backoff_cap=0.01,
        )
        result = run_ensemble(
            corpus,
            agents=agents,
            template=default_template(),
            policy=policy,
            backend=backend,
            log_path=tmp_path / f"log-{suffix}.jsonl",
        )
        entries = read_annotation_log(result.log_path)
        totals.append((sum(e.input_tokens for e in entries), sum(e.output_tokens for e in entries)))
    assert totals[0] == totals[1]


def test_budget_ceiling_aborts_with_partial_log(tmp_path):
    corpus, truth = build_planted_corpus(n_sets=10, seed=3, all_noisy_every=0)
    agents, backend = scripted_ensemble(truth)
    policy = BackendPolicy(
        max_concurrent_requests=1,
        requests_per_minute=10_000_000,
        retry_limit=1,
        backoff_base=0.001,
        backoff_cap=0.01,
        budget_usd=0.005,
    )
    with pytest.raises(BudgetExceededError):
        run_ensemble(
            corpus,
            agents=agents,
            template=default_template(),
            policy=policy,
            backend=backend,
            log_path=tmp_path / "log.jsonl",
            cost_model=CostModel(price_per_1k_input=0.5, price_per_1k_output=1.5),
        )
    persisted = read_annotation_log(tmp_path / "log.jsonl")
    assert 0 < len(persisted) < 50


def test_rate_pacer_spaces_calls(tmp_path):
    import time

    corpus, truth = build_planted_corpus(n_sets=2, seed=3, all_noisy_every=0)
    agents, backend = scripted_ensemble(truth, n_agents=2)
    policy = BackendPolicy(
        max_concurrent_requests=4, requests_per_minute=1200, retry_limit=1, backoff_base=0.001, backoff_cap=0.01
    )
    start = time.monotonic()
    run_ensemble(
        corpus,
        agents=agents,
        template=default_template(),
        policy=policy,
        backend=backend,
        log_path=tmp_path / "log.jsonl",
    )
    # 4 calls at 1200/min = 0.05s spacing => at least 0.15s for the last start
    assert time.monotonic() - start >= 0.15


def test_duplicate_agent_ids_rejected(tmp_path):
    corpus, truth = build_planted_corpus(n_sets=1, seed=3, all_noisy_every=0)
    _, backend = scripted_ensemble(truth)
    agents = [AgentConfig(agent_id=1, backend="scripted"), AgentConfig(agent_id=1, backend="scripted")]
    with pytest.raises(ValueError, match="unique"):
        run_ensemble(
            corpus,
            agents=agents,
            template=default_template(),
            policy=FAST_POLICY,
            backend=backend,
            log_path=tmp_path / "log.jsonl",
        )


def test_agent_config_validation():
    with pytest.raises(ValueError, match="weight"):
        AgentConfig(agent_id=1, weight=0)
    with pytest.raises(ValueError, match="temperature"):
        AgentConfig(agent_id=1, temperature=-0.1)
    with pytest.raises(ValueError, match="backend"):
        AgentConfig(agent_id=1, backend="carrier-pigeon")
    assert len({a.agent_id for a in default_agents()}) == 5


def test_policy_validation():
    with pytest.raises(ValueError):
        BackendPolicy(max_concurrent_requests=0)
    with pytest.raises(ValueError):
        BackendPolicy(budget_usd=0)
