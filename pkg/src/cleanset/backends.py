"""Annotation dispatch: pluggable backends, disk cache, retries, and usage log.

Two backends are provided: an HTTP chat-completion client and a scripted
backend that replays fixture responses keyed by (set id, agent id). The
disk cache keys on the full prompt content plus model, temperature, and
agent id, so a corpus-scale run survives interruption: re-running hits the
cache instead of the paid endpoint. The annotation log is an append-only
record-per-line file and is the artifact every later stage consumes.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

import requests

from .analytics import CostModel
from .corpus import Corpus
from .prompting import Message, PromptTemplate, build_messages, estimate_tokens, heuristic_token_count

STATUS_OK = "ok"
STATUS_FAILED = "failed"

HTTP_CHAT = "http-chat"
SCRIPTED = "scripted"

API_KEY_ENV = "ANNOTATOR_API_KEY"


class BackendError(Exception):
    """Base class for backend failures."""


class TransientBackendError(BackendError):
    """Retryable: rate limits, 5xx, connection problems."""


class PermanentBackendError(BackendError):
    """Not retryable: client errors other than auth/rate limiting."""


class AuthenticationError(BackendError):
    """Not retryable: missing or rejected credential."""


class MalformedResponseError(BackendError):
    """The backend answered but not in the expected shape."""


class BudgetExceededError(BackendError):
    """The configured dollar ceiling was reached; partial results are persisted."""


@dataclass(frozen=True)
class AgentConfig:
    agent_id: int
    model_name: str = "gpt-3.5-turbo-0125"
    temperature: float = 1.0
    weight: int = 1
    backend: str = HTTP_CHAT

    def __post_init__(self) -> None:
        if self.weight < 1:
            raise ValueError(f"agent {self.agent_id}: weight must be >= 1, got {self.weight}")
        if self.temperature < 0:
            raise ValueError(f"agent {self.agent_id}: temperature must be >= 0")
        if self.backend not in (HTTP_CHAT, SCRIPTED):
            raise ValueError(f"agent {self.agent_id}: unknown backend {self.backend!r}")


def default_agents(n: int = 5, model_name: str = "gpt-3.5-turbo-0125", temperature: float = 1.0) -> list[AgentConfig]:
    """The standard ensemble: n equal-weight agents sampling the same model."""
    return [AgentConfig(agent_id=i, model_name=model_name, temperature=temperature) for i in range(1, n + 1)]


@dataclass(frozen=True)
class RawAnnotation:
    agent_id: int
    response_text: str
    input_tokens: int
    output_tokens: int
    from_cache: bool = False
    attempt_count: int = 1

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")
        if self.attempt_count < 1 and not self.from_cache:
            raise ValueError("attempt_count must be >= 1 unless served from cache")


@dataclass(frozen=True)
class BackendPolicy:
    max_concurrent_requests: int = 4
    requests_per_minute: int = 600
    retry_limit: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 30.0
    budget_usd: float | None = None

    def __post_init__(self) -> None:
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.backoff_base <= 0 or self.backoff_cap <= 0:
            raise ValueError("backoff parameters must be positive")
        if self.budget_usd is not None and self.budget_usd <= 0:
            raise ValueError("budget_usd must be positive when set")


@dataclass(frozen=True)
class BackendResult:
    text: str
    input_tokens: int
    output_tokens: int


class Backend(Protocol):
    def complete(self, agent: AgentConfig, messages: list[Message], set_id: str) -> BackendResult: ...


class ScriptedBackend:
    """Deterministic backend replaying fixture responses.

    Responses come from a (set_id, agent_id) -> text mapping or from a
    callable with that signature. Token usage is estimated with the offline
    heuristic so cost accounting works in tests and dry runs.
    """

    def __init__(
        self,
        responses: dict[tuple[str, int], str] | None = None,
        responder: Callable[[str, int, list[Message]], str] | None = None,
        latency: float = 0.0,
    ) -> None:
        if (responses is None) == (responder is None):
            raise ValueError("provide exactly one of responses or responder")
        self._responses = responses
        self._responder = responder
        self._latency = latency

    @classmethod
    def from_jsonl(cls, path: str | Path) -> ScriptedBackend:
        """Load fixture records {set_id, agent_id, response} from a file."""
        responses: dict[tuple[str, int], str] = {}
        with Path(path).open("r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                record = json.loads(line)
                responses[(record["set_id"], int(record["agent_id"]))] = record["response"]
        return cls(responses=responses)

    def complete(self, agent: AgentConfig, messages: list[Message], set_id: str) -> BackendResult:
        if self._latency:
            time.sleep(self._latency)
        if self._responder is not None:
            text = self._responder(set_id, agent.agent_id, messages)
        else:
            try:
                text = self._responses[(set_id, agent.agent_id)]
            except KeyError:
                raise PermanentBackendError(f"no scripted response for set {set_id!r}, agent {agent.agent_id}")
        return BackendResult(
            text=text,
            input_tokens=estimate_tokens(messages),
            output_tokens=heuristic_token_count(text),
        )


class HttpChatBackend:
    """Chat-completion client for one configured endpoint.

    Request body: {model, messages: [{role, content}], temperature}; the
    assistant text and usage token counts are read from the standard
    response shape. The credential comes from the ANNOTATOR_API_KEY
    environment variable.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = API_KEY_ENV,
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, agent: AgentConfig, messages: list[Message], set_id: str) -> BackendResult:
        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise AuthenticationError(f"{self.api_key_env} is not set")
        body = {
            "model": agent.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": agent.temperature,
        }
        try:
            resp = self._session.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"endpoint rejected credential (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise PermanentBackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response shape: {exc}") from exc
        usage = payload.get("usage") or {}
        input_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        if input_tokens is None:
            input_tokens = estimate_tokens(messages)
        if output_tokens is None:
            output_tokens = heuristic_token_count(text)
        return BackendResult(text=text, input_tokens=int(input_tokens), output_tokens=int(output_tokens))


def cache_key(messages: Iterable[Message], model_name: str, temperature: float, agent_id: int) -> str:
    """Stable content hash; any prompt/model/temperature/agent change changes it."""
    payload = {
        "model": model_name,
        "temperature": temperature,
        "agent_id": agent_id,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
    }
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class DiskCache:
    """One JSON file per cache key; writes are atomic, reads lock-free."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> RawAnnotation | None:
        path = self._path(key)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return RawAnnotation(
            agent_id=payload["agent_id"],
            response_text=payload["response_text"],
            input_tokens=payload["input_tokens"],
            output_tokens=payload["output_tokens"],
            from_cache=True,
            attempt_count=payload["attempt_count"],
        )

    def put(self, key: str, annotation: RawAnnotation) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "agent_id": annotation.agent_id,
            "response_text": annotation.response_text,
            "input_tokens": annotation.input_tokens,
            "output_tokens": annotation.output_tokens,
            "attempt_count": annotation.attempt_count,
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(payload, f, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class _RatePacer:
    """Spaces backend call starts at 60/rpm seconds; cache hits bypass it."""

    def __init__(self, requests_per_minute: int) -> None:
        self._interval = 60.0 / requests_per_minute
        self._lock = threading.Lock()
        self._next_start = 0.0

    def wait_turn(self) -> None:
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next_start)
            self._next_start = start + self._interval
        delay = start - time.monotonic()
        if delay > 0:
            time.sleep(delay)


class Annotator:
    """Runs single annotation calls with cache, pacing, retries, and budget."""

    def __init__(
        self,
        backend: Backend,
        policy: BackendPolicy | None = None,
        cache: DiskCache | None = None,
        cost_model: CostModel | None = None,
    ) -> None:
        self.backend = backend
        self.policy = policy or BackendPolicy()
        self.cache = cache
        self.cost_model = cost_model
        self.backend_calls = 0
        self.spent_usd = 0.0
        self._pacer = _RatePacer(self.policy.requests_per_minute)
        self._lock = threading.Lock()

    def annotate_once(self, agent: AgentConfig, messages: list[Message], set_id: str = "") -> RawAnnotation:
        key = cache_key(messages, agent.model_name, agent.temperature, agent.agent_id)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached

        self._check_budget()
        attempt = 0
        while True:
            attempt += 1
            self._pacer.wait_turn()
            with self._lock:
                self.backend_calls += 1
            try:
                result = self.backend.complete(agent, messages, set_id)
            except TransientBackendError:
                if attempt > self.policy.retry_limit:
                    raise
                delay = min(self.policy.backoff_base * (2 ** (attempt - 1)), self.policy.backoff_cap)
                time.sleep(delay)
                continue
            break

        annotation = RawAnnotation(
            agent_id=agent.agent_id,
            response_text=result.text,
            input_tokens=result.input_tokens,
            output_tokens=result.output_tokens,
            from_cache=False,
            attempt_count=attempt,
        )
        self._record_cost(annotation)
        if self.cache is not None:
            self.cache.put(key, annotation)
        return annotation

    def _check_budget(self) -> None:
        if self.policy.budget_usd is None or self.cost_model is None:
            return
        with self._lock:
            if self.spent_usd >= self.policy.budget_usd:
                raise BudgetExceededError(
                    f"spent ${self.spent_usd:.2f} of ${self.policy.budget_usd:.2f} budget; aborting"
                )

    def _record_cost(self, annotation: RawAnnotation) -> None:
        if self.cost_model is None:
            return
        with self._lock:
            self.spent_usd += self.cost_model.call_cost(annotation.input_tokens, annotation.output_tokens)


# -- annotation log --


@dataclass(frozen=True)
class AnnotationLogEntry:
    set_id: str
    agent_id: int
    response_text: str
    input_tokens: int
    output_tokens: int
    status: str

    def to_record(self) -> dict:
        return {
            "set_id": self.set_id,
            "agent_id": self.agent_id,
            "response_text": self.response_text,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "status": self.status,
        }

    @classmethod
    def from_record(cls, record: dict) -> AnnotationLogEntry:
        return cls(
            set_id=record["set_id"],
            agent_id=int(record["agent_id"]),
            response_text=record["response_text"],
            input_tokens=int(record["input_tokens"]),
            output_tokens=int(record["output_tokens"]),
            status=record["status"],
        )


def read_annotation_log(path: str | Path) -> list[AnnotationLogEntry]:
    path = Path(path)
    if not path.exists():
        return []
    entries = []
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entries.append(AnnotationLogEntry.from_record(json.loads(line)))
    return entries


def effective_annotations(entries: Iterable[AnnotationLogEntry]) -> dict[tuple[str, int], AnnotationLogEntry]:
    """Last entry per (set, agent) wins; a retried failure can be superseded."""
    effective: dict[tuple[str, int], AnnotationLogEntry] = {}
    for entry in entries:
        effective[(entry.set_id, entry.agent_id)] = entry
    return effective


class _AnnotationLogWriter:
    """Append-only writer that skips pairs already recorded at equal status."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._status: dict[tuple[str, int], str] = {
            key: entry.status for key, entry in effective_annotations(read_annotation_log(self.path)).items()
        }

    def append(self, entry: AnnotationLogEntry) -> None:
        key = (entry.set_id, entry.agent_id)
        with self._lock:
            previous = self._status.get(key)
            if previous == STATUS_OK or previous == entry.status:
                return
            self._status[key] = entry.status
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")


@dataclass
class EnsembleRunResult:
    per_set: dict[str, list[RawAnnotation]]
    backend_calls: int
    cache_hits: int
    failed_pairs: list[tuple[str, int]]
    unannotated_set_ids: list[str]
    log_path: Path


def run_ensemble(
    corpus: Corpus,
    agents: list[AgentConfig],
    template: PromptTemplate,
    policy: BackendPolicy,
    backend: Backend,
    log_path: str | Path,
    cache: DiskCache | None = None,
    cost_model: CostModel | None = None,
) -> EnsembleRunResult:
    """Annotate every non-quarantine set with every agent.

    Results are appended to the annotation log as they complete, so an
    interrupted run can be re-launched: cached pairs are served without
    backend calls and already-logged pairs are not re-appended. Failed
    pairs are logged with status "failed" and skipped by voting; they are
    never silently dropped.
    """
    if not agents:
        raise ValueError("at least one agent is required")
    ids = [a.agent_id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValueError(f"agent ids must be unique, got {ids}")

    annotator = Annotator(backend, policy=policy, cache=cache, cost_model=cost_model)
    writer = _AnnotationLogWriter(log_path)
    targets = [s for s in corpus if s.split != "quarantine"]

    per_set: dict[str, list[RawAnnotation]] = {s.id: [] for s in targets}
    failed_pairs: list[tuple[str, int]] = []
    results_lock = threading.Lock()
    budget_stop = threading.Event()

    def annotate_pair(set_id: str, messages: list[Message], agent: AgentConfig) -> None:
        if budget_stop.is_set():
            return
        try:
            annotation = annotator.annotate_once(agent, messages, set_id=set_id)
        except BudgetExceededError:
            budget_stop.set()
            raise
        except BackendError as exc:
            writer.append(
                AnnotationLogEntry(
                    set_id=set_id,
                    agent_id=agent.agent_id,
                    response_text=f"<{type(exc).__name__}: {exc}>",
                    input_tokens=0,
                    output_tokens=0,
                    status=STATUS_FAILED,
                )
            )
            with results_lock:
                failed_pairs.append((set_id, agent.agent_id))
            return
        writer.append(
            AnnotationLogEntry(
                set_id=set_id,
                agent_id=agent.agent_id,
                response_text=annotation.response_text,
                input_tokens=annotation.input_tokens,
                output_tokens=annotation.output_tokens,
                status=STATUS_OK,
            )
        )
        with results_lock:
            per_set[set_id].append(annotation)

    hits_before = cache.hits if cache is not None else 0
    futures = []
    with ThreadPoolExecutor(max_workers=policy.max_concurrent_requests) as pool:
        for s in targets:
            messages = build_messages(template, s)
            for agent in agents:
                futures.append(pool.submit(annotate_pair, s.id, messages, agent))
    # Pool shutdown joined every task; surface the budget abort (or any bug)
    # only after the log is fully flushed.
    errors = [f.exception() for f in futures if f.exception() is not None]
    for exc in errors:
        if isinstance(exc, BudgetExceededError):
            raise exc
    if errors:
        raise errors[0]

    unannotated = [s.id for s in targets if not per_set[s.id]]
    return EnsembleRunResult(
        per_set=per_set,
        backend_calls=annotator.backend_calls,
        cache_hits=(cache.hits - hits_before) if cache is not None else 0,
        failed_pairs=failed_pairs,
        unannotated_set_ids=unannotated,
        log_path=Path(log_path),
    )
