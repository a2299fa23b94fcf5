"""Local completion service: rank suggestions over HTTP, log acceptances.

Closes the data loop: every accepted suggestion is appended to the event
log in the exact completion-event schema, so the log is directly usable as
a fine-tuning dataset. Wire schemas are documented in docs/api.md.

Concurrency: request handlers share an immutable model snapshot swapped
atomically by /v1/reload; the event log has one serialized writer using a
single full-line write plus fsync, so readers never observe a partial line.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import threading
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import kernels, ranker as ranker_mod
from .corpus import CompletionEvent, CorpusError
from .encoding import encode_texts
from .languages import LexError, get_language, is_identifier_text, lex, significant
from .model import TransformerLM, load_checkpoint
from .tokenizer import VarMap
from .util import stable_hash
from .vocab import Vocabulary

DEFAULT_PORT = 8731
SHOWN_SUGGESTIONS = 5
DERIVED_CANDIDATES = 20
MAX_LOGGED_CONTEXT = 96


@dataclass
class Snapshot:
    lm: TransformerLM
    vocabulary: Vocabulary
    multilingual: bool
    provenance: list
    source_path: str
    loaded_at: float

    @classmethod
    def from_checkpoint_file(cls, path) -> "Snapshot":
        ckpt = load_checkpoint(path)
        if "vocab" not in ckpt.meta:
            raise ValueError(f"{path}: checkpoint does not embed a vocabulary")
        vocabulary = Vocabulary.from_dump(ckpt.meta["vocab"])
        return cls(
            lm=ckpt.model(dtype=np.float64),
            vocabulary=vocabulary,
            multilingual=bool(ckpt.meta.get("multilingual", False)),
            provenance=list(ckpt.provenance),
            source_path=str(path),
            loaded_at=time.time(),
        )


class EventLog:
    """Append-only JSONL log with full-line writes and per-line fsync."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(self.path, os.O_APPEND | os.O_CREAT | os.O_WRONLY, 0o644)
        self._lock = threading.Lock()

    def append(self, event: CompletionEvent) -> None:
        line = (json.dumps(asdict(event), ensure_ascii=False) + "\n").encode("utf-8")
        with self._lock:
            os.write(self._fd, line)
            os.fsync(self._fd)

    def close(self) -> None:
        os.close(self._fd)


@dataclass
class _Session:
    language: str
    context_texts: list[str]
    candidates: list[str]
    shown: list[str]
    developer_id: str
    expires: float


class CompletionService:
    """Holds the snapshot, the session table, and the event log."""

    def __init__(self, checkpoint_path, log_path, session_ttl: float = 600.0):
        self._snapshot = Snapshot.from_checkpoint_file(checkpoint_path)
        self.log = EventLog(log_path)
        self.session_ttl = session_ttl
        self._sessions: dict[str, _Session] = {}
        self._sessions_lock = threading.Lock()
        self._counter = 0
        self.started = time.time()

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def reload(self, checkpoint_path) -> Snapshot:
        snap = Snapshot.from_checkpoint_file(checkpoint_path)  # validate first
        self._snapshot = snap  # atomic reference swap
        return snap

    def _next_request_id(self) -> str:
        with self._sessions_lock:
            self._counter += 1
            return f"req-{self._counter:08d}-{os.getpid():x}"

    def _store_session(self, request_id: str, session: _Session) -> None:
        now = time.time()
        with self._sessions_lock:
            expired = [k for k, s in self._sessions.items() if s.expires < now]
            for k in expired:
                del self._sessions[k]
            self._sessions[request_id] = session

    def _pop_session(self, request_id: str) -> _Session | None:
        with self._sessions_lock:
            s = self._sessions.get(request_id)
            if s is None or s.expires < time.time():
                self._sessions.pop(request_id, None)
                return None
            del self._sessions[request_id]
            return s

    # -- operations -----------------------------------------------------------

    def derive_candidates(self, context_texts: list[str], language: str) -> list[str]:
        """Fallback suggestion list: same-context identifiers + frequent ones."""
        lang = get_language(language)
        snap = self.snapshot
        seen: list[str] = []
        for t in reversed(context_texts):
            if is_identifier_text(t) and t not in lang.keywords and t not in seen:
                seen.append(t)
        voc = snap.vocabulary
        for s in voc.subtokens[voc.n_specials:]:
            if len(seen) >= DERIVED_CANDIDATES:
                break
            if is_identifier_text(s) and s not in lang.keywords and s not in seen:
                seen.append(s)
        return seen

    def complete(self, language: str, before_cursor: str,
                 candidates: list[str] | None, developer_id: str) -> dict:
        snap = self.snapshot
        try:
            get_language(language)
            toks = significant(lex(before_cursor, language))
        except LexError as exc:
            raise ValueError(str(exc)) from exc
        if not toks:
            raise ValueError("before_cursor has no lexical content")
        texts = [t.text for t in toks]

        cand_list = candidates if candidates else self.derive_candidates(texts, language)
        if not cand_list:
            raise ValueError("no candidates available")
        if len(set(cand_list)) != len(cand_list):
            raise ValueError("candidate list contains duplicates")

        window = snap.lm.config.context_len - 2
        t0 = time.perf_counter()
        ctx_ids, vm = event_context_from_texts(texts, language, snap, window)
        tree = ranker_mod.build_tree(cand_list, snap.vocabulary, context_var_map=vm)
        ranked = ranker_mod.score_candidates(ctx_ids, tree, snap.lm)
        latency_ms = (time.perf_counter() - t0) * 1000.0

        shown = ranked.items[:SHOWN_SUGGESTIONS]
        request_id = self._next_request_id()
        self._store_session(request_id, _Session(
            language=language,
            context_texts=texts[-MAX_LOGGED_CONTEXT:],
            candidates=list(cand_list),
            shown=[s.token for s in shown],
            developer_id=developer_id,
            expires=time.time() + self.session_ttl,
        ))
        return {
            "request_id": request_id,
            "suggestions": [{"token": s.token, "score": s.score, "rank": s.rank}
                            for s in shown],
            "skipped": [{"token": t, "reason": r} for t, r in ranked.skipped],
            "latency_ms": latency_ms,
        }

    def accept(self, request_id: str, accepted: str) -> dict:
        session = self._pop_session(request_id)
        if session is None:
            raise KeyError(f"unknown or expired request_id {request_id!r}")
        if accepted not in session.shown:
            # keep the session so a corrected accept can still land
            self._store_session(request_id, session)
            raise ValueError(f"token {accepted!r} was not among the shown suggestions")
        event = CompletionEvent(
            id=f"ev-{stable_hash('accept', request_id, accepted):016x}",
            language=session.language,
            context_tokens=session.context_texts,
            candidates=session.candidates,
            accepted=accepted,
            developer_id=session.developer_id,
            day=_dt.date.today().isoformat(),
        )
        self.log.append(event)
        return {"event_id": event.id, "logged": True}

    def health(self) -> dict:
        snap = self.snapshot
        cfg = snap.lm.config
        return {
            "status": "ok",
            "model": {
                "checkpoint": snap.source_path,
                "provenance": snap.provenance,
                "d_model": cfg.d_model,
                "n_layers": cfg.n_layers,
                "context_len": cfg.context_len,
                "vocab_size": cfg.vocab_size,
                "multilingual": snap.multilingual,
            },
            "kernel_backend": kernels.backend(),
            "log_path": str(self.log.path),
            "uptime_s": time.time() - self.started,
        }


def event_context_from_texts(texts: list[str], language: str, snap: Snapshot,
                             window: int):
    vm = VarMap(snap.vocabulary.n_placeholders)
    enc = encode_texts(texts, language, snap.vocabulary, snap.multilingual, vm)
    return enc.ids[-window:], vm


# -- HTTP layer ------------------------------------------------------------------


class CompleteRequest(BaseModel):
    language: str
    before_cursor: str
    candidates: list[str] | None = None
    session_id: str = ""
    developer_id: str = "anon"


class AcceptRequest(BaseModel):
    request_id: str
    accepted: str
    session_id: str = ""


class ReloadRequest(BaseModel):
    checkpoint_path: str


def create_app(service: CompletionService, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="xfercomplete", docs_url=None, redoc_url=None)
    app.state.service = service

    @app.get("/v1/health")
    def health():
        return service.health()

    @app.post("/v1/complete")
    def complete(req: CompleteRequest):
        try:
            return service.complete(req.language, req.before_cursor,
                                    req.candidates, req.developer_id)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/v1/accept")
    def accept(req: AcceptRequest):
        try:
            return service.accept(req.request_id, req.accepted)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0]))
        except (ValueError, CorpusError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/v1/reload")
    def reload(req: ReloadRequest):
        try:
            snap = service.reload(req.checkpoint_path)
        except Exception as exc:
            raise HTTPException(
                status_code=400,
                detail=f"reload failed, previous model still serving: {exc}")
        return {"reloaded": True, "checkpoint": snap.source_path}

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        dist = Path(frontend_dir)
        app.mount("/static", StaticFiles(directory=dist), name="static")

        @app.get("/")
        def index():
            page = dist / "index.html"
            if page.is_file():
                return FileResponse(page)
            return JSONResponse({"status": "no frontend bundle built"})
    else:
        @app.get("/")
        def index():
            return JSONResponse({"service": "xfercomplete",
                                 "endpoints": ["/v1/health", "/v1/complete",
                                               "/v1/accept", "/v1/reload"]})

    return app
