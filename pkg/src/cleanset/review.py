"""HTTP service for human review: flagged sets, rationales, and overrides.

The service is read-only over the corpus and decisions; its only mutable
state is the append-only overrides file, so exports are always computed
from first principles through the same apply_decisions path the batch
pipeline uses. Reviewer identity is a free-form string: this is a
desk-scale tool and authentication belongs to the deployment.
"""

from __future__ import annotations

import json
import mimetypes
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterator, Mapping
from urllib.parse import parse_qs, unquote, urlparse

from .cleanse import (
    KEEP,
    REMOVE,
    CleanseError,
    OverrideRecord,
    append_override,
    apply_decisions,
    effective_overrides,
    load_overrides,
)
from .corpus import Corpus, record_line
from .verdict import EnsembleDecision

FILTERS = ("all", "noisy_only", "quarantine_candidates", "unreviewed")

STATUS_UNTOUCHED = "untouched"
STATUS_PARTIAL = "partially_reviewed"
STATUS_CONFIRMED = "confirmed"


class ReviewError(ValueError):
    """Validation failure on a review request."""


class NotFoundError(ReviewError):
    """Unknown set id."""


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class ReviewState:
    total_flagged: int = 0
    reviewed: int = 0
    status_counts: dict[str, int] = field(default_factory=dict)
    agreement: float | None = None

    def to_dict(self) -> dict:
        return {
            "total_flagged": self.total_flagged,
            "reviewed": self.reviewed,
            "status_counts": dict(self.status_counts),
            "agreement": self.agreement,
        }


class ReviewService:
    """Query and override layer shared by the HTTP handler and the CLI."""

    def __init__(
        self,
        corpus: Corpus,
        decisions: Mapping[str, EnsembleDecision],
        overrides_path: str | Path,
    ) -> None:
        self.corpus = corpus
        self.decisions = dict(decisions)
        self.overrides_path = Path(overrides_path)
        self._write_lock = threading.Lock()
        self._sets = {s.id: s for s in corpus}

    # -- override bookkeeping --

    def _effective(self) -> dict[tuple[str, int], OverrideRecord]:
        return effective_overrides(load_overrides(self.overrides_path))

    def _set_status(self, set_id: str, effective: Mapping[tuple[str, int], OverrideRecord]) -> str:
        decision = self.decisions.get(set_id)
        flagged = decision.noisy if decision else frozenset()
        overridden = {doc for (sid, doc) in effective if sid == set_id}
        if not overridden:
            return STATUS_UNTOUCHED
        if set(flagged) <= overridden:
            return STATUS_CONFIRMED
        return STATUS_PARTIAL

    # -- operations --

    def list_flagged(self, filter_name: str = "all", page: int = 1, page_size: int = 50) -> dict:
        if filter_name not in FILTERS:
            raise ReviewError(f"unknown filter {filter_name!r}; expected one of {FILTERS}")
        if page < 1 or page_size < 1:
            raise ReviewError("page and page_size must be >= 1")
        effective = self._effective()
        entries = []
        for set_id in sorted(self.decisions):
            doc_set = self._sets.get(set_id)
            decision = self.decisions[set_id]
            if doc_set is None:
                continue
            status = self._set_status(set_id, effective)
            noisy = decision.noisy
            if filter_name == "noisy_only" and not noisy:
                continue
            if filter_name == "quarantine_candidates" and set(noisy) != {d.index for d in doc_set.documents}:
                continue
            if filter_name == "unreviewed" and (not noisy or status == STATUS_CONFIRMED):
                continue
            entries.append(
                {
                    "id": set_id,
                    "doc_count": len(doc_set.documents),
                    "flagged_count": len(noisy),
                    "review_status": status,
                }
            )
        start = (page - 1) * page_size
        return {
            "items": entries[start : start + page_size],
            "page": page,
            "page_size": page_size,
            "total": len(entries),
        }

    def get_set_detail(self, set_id: str) -> dict:
        doc_set = self._sets.get(set_id)
        if doc_set is None:
            raise NotFoundError(f"unknown set {set_id!r}")
        decision = self.decisions.get(set_id)
        effective = self._effective()
        documents = []
        for doc in doc_set.documents:
            flagged = decision is not None and doc.index in decision.noisy
            override = effective.get((set_id, doc.index))
            if override is not None:
                effective_action = "kept" if override.action == KEEP else "removed"
            else:
                effective_action = "removed" if flagged else "kept"
            documents.append(
                {
                    "index": doc.index,
                    "content": doc.content,
                    "tally": decision.tallies.get(doc.index, 0) if decision else 0,
                    "flagged": flagged,
                    "effective_action": effective_action,
                    "override": override.to_record() if override else None,
                }
            )
        per_agent = []
        if decision is not None:
            per_agent = [
                {
                    "agent_id": v.agent_id,
                    "status": v.parse_status,
                    "flagged": sorted(v.flagged),
                    "rationale": v.rationale,
                }
                for v in decision.verdicts
            ]
        return {
            "id": doc_set.id,
            "split": doc_set.split,
            "summary": doc_set.summary,
            "total_weight": decision.total_weight if decision else 0,
            "annotated": decision is not None,
            "documents": documents,
            "per_agent": per_agent,
            "review_status": self._set_status(set_id, effective),
        }

    def record_override(
        self,
        set_id: str,
        doc_index: int,
        action: str,
        reviewer: str,
        note: str = "",
        timestamp: str | None = None,
    ) -> dict:
        doc_set = self._sets.get(set_id)
        if doc_set is None:
            raise NotFoundError(f"unknown set {set_id!r}")
        if not 1 <= doc_index <= len(doc_set.documents):
            raise ReviewError(f"set {set_id!r} has {len(doc_set.documents)} documents, got index {doc_index}")
        if set_id not in self.decisions:
            raise ReviewError(f"set {set_id!r} has no ensemble decision to review")
        try:
            record = OverrideRecord(
                set_id=set_id,
                doc_index=doc_index,
                action=action,
                reviewer=reviewer,
                timestamp=timestamp or utc_now_iso(),
                note=note,
            )
        except CleanseError as exc:
            raise ReviewError(str(exc)) from exc
        with self._write_lock:
            append_override(self.overrides_path, record)
        effective = self._effective()
        winner = effective[(set_id, doc_index)]
        return {
            "recorded": record.to_record(),
            "effective_action": "kept" if winner.action == KEEP else "removed",
            "review_status": self._set_status(set_id, effective),
        }

    def review_stats(self) -> ReviewState:
        effective = self._effective()
        state = ReviewState(status_counts={STATUS_UNTOUCHED: 0, STATUS_PARTIAL: 0, STATUS_CONFIRMED: 0})
        correct = 0
        for set_id, decision in self.decisions.items():
            if not decision.noisy or set_id not in self._sets:
                continue
            state.total_flagged += 1
            status = self._set_status(set_id, effective)
            state.status_counts[status] += 1
            if status != STATUS_CONFIRMED:
                continue
            state.reviewed += 1
            overturned = any(
                (override.action == KEEP and doc in decision.noisy)
                or (override.action == REMOVE and doc not in decision.noisy)
                for (sid, doc), override in effective.items()
                if sid == set_id
            )
            if not overturned:
                correct += 1
        if state.reviewed:
            state.agreement = correct / state.reviewed
        return state

    def export_lines(self) -> Iterator[str]:
        overrides = load_overrides(self.overrides_path)
        cleansed, _ = apply_decisions(self.corpus, self.decisions, overrides)
        for s in cleansed:
            yield record_line(s)


# -- HTTP layer --


class _ReviewHandler(BaseHTTPRequestHandler):
    server: ReviewServer

    def log_message(self, format: str, *args) -> None:  # quiet by default
        if self.server.verbose:
            super().log_message(format, *args)

    def _send_json(self, payload: dict, status: int = 200) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        url = urlparse(self.path)
        path = url.path
        service = self.server.service
        try:
            if path == "/api/sets":
                params = parse_qs(url.query)
                self._send_json(
                    service.list_flagged(
                        filter_name=params.get("filter", ["all"])[0],
                        page=int(params.get("page", ["1"])[0]),
                        page_size=int(params.get("page_size", ["50"])[0]),
                    )
                )
            elif path.startswith("/api/sets/"):
                set_id = unquote(path[len("/api/sets/") :])
                self._send_json(service.get_set_detail(set_id))
            elif path == "/api/stats":
                self._send_json(service.review_stats().to_dict())
            elif path == "/api/export":
                self._stream_export()
            else:
                self._serve_static(path)
        except NotFoundError as exc:
            self._send_json({"error": str(exc)}, status=404)
        except (ReviewError, ValueError) as exc:
            self._send_json({"error": str(exc)}, status=400)

    def do_POST(self) -> None:
        url = urlparse(self.path)
        path = url.path
        service = self.server.service
        try:
            if path.startswith("/api/sets/") and path.endswith("/overrides"):
                set_id = unquote(path[len("/api/sets/") : -len("/overrides")])
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError as exc:
                    raise ReviewError(f"invalid JSON body: {exc.msg}") from exc
                if not isinstance(body, dict) or "doc_index" not in body or "action" not in body:
                    raise ReviewError("body must contain doc_index and action")
                result = service.record_override(
                    set_id=set_id,
                    doc_index=int(body["doc_index"]),
                    action=str(body["action"]),
                    reviewer=str(body.get("reviewer", "anonymous")),
                    note=str(body.get("note", "")),
                    timestamp=body.get("timestamp"),
                )
                self._send_json(result, status=201)
            else:
                self._send_json({"error": f"no such endpoint: POST {path}"}, status=404)
        except NotFoundError as exc:
            self._send_json({"error": str(exc)}, status=404)
        except (ReviewError, ValueError) as exc:
            self._send_json({"error": str(exc)}, status=400)

    def _stream_export(self) -> None:
        payload = "".join(self.server.service.export_lines()).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _serve_static(self, path: str) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            if path in ("/", "/index.html"):
                body = _FALLBACK_PAGE.encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/html; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
            self._send_json({"error": f"not found: {path}"}, status=404)
            return
        relative = path.lstrip("/") or "index.html"
        target = (ui_dir / relative).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._send_json({"error": f"not found: {path}"}, status=404)
            return
        body = target.read_bytes()
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


_FALLBACK_PAGE = """<!DOCTYPE html>
<html><head><title>Review service</title></head>
<body><h1>Review service is running</h1>
<p>The review UI bundle is not built. The JSON API is available under
<code>/api/sets</code>, <code>/api/stats</code> and <code>/api/export</code>.</p>
</body></html>
"""


class ReviewServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self,
        service: ReviewService,
        host: str = "127.0.0.1",
        port: int = 0,
        ui_dir: str | Path | None = None,
        verbose: bool = False,
    ) -> None:
        self.service = service
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.verbose = verbose
        super().__init__((host, port), _ReviewHandler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"
