"""Session-scoped HTTP API for human labelers.

JSON over plain HTTP/1.1, all routes under ``/v1``. A session walks
fitting -> awaiting_labels [-> awaiting_keywords] -> fitting ... ->
stopped; mutations are serialized per session and appended to an
event log before they are applied, so any session can be rebuilt by
replaying its log against the same corpus and config. Fits run off the
request path; clients poll the session status.

Error bodies are ``{"code", "message", "field"?}``.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .active import ActiveSession, SessionError, StoppingRule
from .corpus import Corpus, load_corpus, read_labels_file
from .keywords import KeywordError
from .model import Hyperparams, LabelError, LabelStore, ModelError, save_checkpoint

_MODES = ("binary", "multi_cluster_binary", "multiclass")
_STRATEGIES = ("uncertainty", "random")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _require(payload: dict, key: str, kind, field: str | None = None):
    field = field or key
    if key not in payload:
        raise ApiError(400, "missing_field", f"missing required field {field!r}", field)
    value = payload[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ApiError(400, "validation_error", f"field {field!r} has the wrong type", field)
    return value


def _validate_session_config(cfg: dict, corpus: Corpus) -> dict:
    """Normalize and bound-check a session config payload."""
    out: dict[str, Any] = {}
    mode = cfg.get("mode", "binary")
    if mode not in _MODES:
        raise ApiError(400, "validation_error", f"mode must be one of {_MODES}", "mode")
    out["mode"] = mode
    lam = cfg.get("lambda", 0.001)
    if not isinstance(lam, (int, float)) or not 0.0 <= float(lam) <= 1.0:
        raise ApiError(400, "validation_error", "lambda must be in [0, 1]", "lambda")
    out["lambda"] = float(lam)
    n_clusters = cfg.get("n_clusters", 2 if mode != "multiclass" else None)
    if mode == "multiclass" and n_clusters is None:
        n_clusters = len(cfg.get("class_names") or ()) or None
    if not isinstance(n_clusters, int) or n_clusters < 2:
        raise ApiError(400, "validation_error", "n_clusters must be an integer >= 2", "n_clusters")
    out["n_clusters"] = n_clusters
    k_star = cfg.get("k_star")
    if mode == "multi_cluster_binary":
        if not isinstance(k_star, int) or not 0 <= k_star < n_clusters:
            raise ApiError(400, "validation_error", f"k_star must be in [0, {n_clusters})", "k_star")
    elif k_star is not None:
        raise ApiError(400, "validation_error", "k_star only applies to multi_cluster_binary mode", "k_star")
    out["k_star"] = k_star

    batch_size = cfg.get("batch_size", 20)
    if not isinstance(batch_size, int) or batch_size < 1:
        raise ApiError(400, "validation_error", "batch_size must be a positive integer", "batch_size")
    out["batch_size"] = batch_size
    strategy = cfg.get("strategy", "uncertainty")
    if strategy not in _STRATEGIES:
        raise ApiError(400, "validation_error", f"strategy must be one of {_STRATEGIES}", "strategy")
    out["strategy"] = strategy
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ApiError(400, "validation_error", "seed must be a non-negative integer", "seed")
    out["seed"] = seed
    test_fraction = cfg.get("test_fraction", 0.0)
    if not isinstance(test_fraction, (int, float)) or not 0.0 <= float(test_fraction) < 1.0:
        raise ApiError(400, "validation_error", "test_fraction must be in [0, 1)", "test_fraction")
    out["test_fraction"] = float(test_fraction)

    alpha = cfg.get("alpha", 2.0)
    if isinstance(alpha, list):
        if len(alpha) != n_clusters or any(not isinstance(a, (int, float)) or a <= 0 for a in alpha):
            raise ApiError(400, "validation_error", f"alpha must be {n_clusters} positive numbers", "alpha")
    elif not isinstance(alpha, (int, float)) or alpha <= 0:
        raise ApiError(400, "validation_error", "alpha must be positive", "alpha")
    out["alpha"] = alpha
    beta = cfg.get("beta", 2.0)
    if not isinstance(beta, (int, float)) or beta < 1:
        raise ApiError(400, "validation_error", "beta must be >= 1", "beta")
    out["beta"] = float(beta)

    stop = cfg.get("stop", {"kind": "fixed_budget", "budget": corpus.n_docs})
    kind = stop.get("kind")
    if kind not in ("fixed_budget", "f1_delta", "stability"):
        raise ApiError(400, "validation_error", "stop.kind must be fixed_budget, f1_delta or stability", "stop.kind")
    if kind == "fixed_budget" and (not isinstance(stop.get("budget"), int) or stop["budget"] < 0):
        raise ApiError(400, "validation_error", "stop.budget must be a non-negative integer", "stop.budget")
    out["stop"] = {
        "kind": kind,
        "budget": stop.get("budget"),
        "delta": float(stop.get("delta", 0.01)),
        "patience": int(stop.get("patience", 1)),
    }

    kw = cfg.get("keywords", {}) or {}
    gamma = kw.get("gamma", 10.0)
    if not isinstance(gamma, (int, float)) or gamma <= 0:
        raise ApiError(400, "validation_error", "keywords.gamma must be positive", "keywords.gamma")
    m = kw.get("m", 10)
    if not isinstance(m, int) or m < 1:
        raise ApiError(400, "validation_error", "keywords.m must be a positive integer", "keywords.m")
    out["keywords"] = {
        "enabled": bool(kw.get("enabled", False)),
        "gamma": float(gamma),
        "m": m,
        "initial": {int(k): list(v) for k, v in (kw.get("initial") or {}).items()},
    }

    class_names = cfg.get("class_names")
    if class_names is not None:
        n_classes = 2 if mode != "multiclass" else n_clusters
        if len(class_names) != n_classes:
            raise ApiError(400, "validation_error", f"class_names must list {n_classes} names", "class_names")
    out["class_names"] = class_names
    out["tol"] = float(cfg.get("tol", 1e-8))
    out["max_iter"] = int(cfg.get("max_iter", 500))
    return out


def build_session(corpus: Corpus, config: dict, eval_truth: LabelStore | None) -> ActiveSession:
    """Construct the loop engine from a validated session config."""
    hyper = Hyperparams.defaults(
        n_features=corpus.n_features,
        mode=config["mode"],
        n_clusters=config["n_clusters"],
        lam=config["lambda"],
        alpha=config["alpha"],
        beta=config["beta"],
        k_star=config["k_star"],
    )
    stop_cfg = config["stop"]
    stop = StoppingRule(
        kind=stop_cfg["kind"],
        budget=stop_cfg.get("budget"),
        delta=stop_cfg.get("delta", 0.01),
        patience=stop_cfg.get("patience", 1),
    )
    kw = config["keywords"]
    return ActiveSession(
        corpus=corpus,
        hyper=hyper,
        stop=stop,
        batch_size=config["batch_size"],
        strategy=config["strategy"],
        seed=config["seed"],
        test_fraction=config["test_fraction"],
        eval_truth=eval_truth,
        class_names=config["class_names"],
        keywords_enabled=kw["enabled"],
        gamma=kw["gamma"],
        keywords_per_class=kw["m"],
        initial_keywords=kw["initial"],
        tol=config["tol"],
        max_iter=config["max_iter"],
    )


class SessionRuntime:
    """One live session: the loop engine, its status, and its log.

    Events are appended to disk before they mutate the engine, and the
    same dispatch path serves live requests and replay, so a replayed
    log reproduces the checkpoint bit-for-bit.
    """

    def __init__(
        self,
        session_id: str,
        directory: Path,
        corpus: Corpus,
        config: dict,
        eval_truth: LabelStore | None,
        executor: ThreadPoolExecutor | None,
    ):
        self.session_id = session_id
        self.directory = directory
        self.config = config
        self.executor = executor
        self.lock = threading.RLock()
        self.session = build_session(corpus, config, eval_truth)
        self.status = "awaiting_labels"
        self.created_at = _now()
        self.updated_at = self.created_at
        self.submission_ids: set[str] = set()
        self._fit_pending = False
        self.session.seed_queries()

    # -- persistence --------------------------------------------------------

    @property
    def events_path(self) -> Path:
        return self.directory / "events.jsonl"

    @property
    def checkpoint_path(self) -> Path:
        return self.directory / "checkpoint.npz"

    def _append_event(self, event: dict) -> None:
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def _save_checkpoint(self) -> None:
        if self.session.params is None:
            return
        effective = self.session.hyper
        save_checkpoint(
            self.checkpoint_path,
            effective,
            self.session.params,
            self.session.corpus.vocabulary.content_hash(),
        )

    # -- event dispatch (shared by live requests and replay) ---------------

    def dispatch(self, event: dict, synchronous: bool) -> None:
        etype = event.get("type")
        if etype == "labels":
            if event.get("submission_id"):
                self.submission_ids.add(event["submission_id"])
            self.session.apply_labels([(d, int(c)) for d, c in event["pairs"]])
            if self.session.batch_complete:
                if (
                    self.session.keywords_enabled
                    and self.session.params is not None
                ):
                    self.status = "awaiting_keywords"
                else:
                    self._start_fit(synchronous)
        elif etype == "keywords":
            self.session.apply_keyword_decisions(
                [(t, int(c), bool(a)) for t, c, a in event["decisions"]]
            )
            self._start_fit(synchronous)
        elif etype == "stop":
            self.session.force_stop()
            self._save_checkpoint()
            self.status = "stopped"
        else:
            raise SessionError(f"unknown event type {etype!r}")
        self.updated_at = _now()

    def _start_fit(self, synchronous: bool) -> None:
        self.status = "fitting"
        if synchronous or self.executor is None:
            self._fit()
        else:
            self._fit_pending = True
            self.executor.submit(self._fit_locked)

    def _fit_locked(self) -> None:
        with self.lock:
            if self._fit_pending:
                self._fit_pending = False
                self._fit()

    def _ensure_fit_done(self) -> None:
        # A stop request may arrive before the queued fit thread runs;
        # the log's meaning is "fit precedes the next event", so run it.
        if self._fit_pending:
            self._fit_pending = False
            self._fit()

    def _fit(self) -> None:
        outcome = self.session.advance()
        # checkpoint lands before the status flip so a poller that sees
        # the new status never reads a half-written file
        self._save_checkpoint()
        self.updated_at = _now()
        self.status = "stopped" if outcome == "stopped" else "awaiting_labels"

    # -- live mutations ------------------------------------------------------

    def submit_labels(self, pairs: list[tuple[str, int]], submission_id: str | None) -> None:
        with self.lock:
            if submission_id and submission_id in self.submission_ids:
                return
            self._require_status("awaiting_labels")
            pending = set(self.session.pending_queries)
            seen: set[str] = set()
            for doc_id, cls in pairs:
                if doc_id in seen:
                    raise ApiError(400, "duplicate_doc", f"doc {doc_id!r} appears twice in one submission")
                seen.add(doc_id)
                if doc_id not in self.session.corpus._row_of:
                    raise ApiError(404, "unknown_doc", f"doc {doc_id!r} is not in the corpus")
                if self.session.labels.is_labeled(doc_id):
                    raise ApiError(409, "already_labeled", f"doc {doc_id!r} is already labeled")
                if doc_id not in pending:
                    raise ApiError(409, "not_in_batch", f"doc {doc_id!r} is not in the current query batch")
                if not 0 <= cls < self.session.labels.n_classes:
                    raise ApiError(400, "validation_error", f"class index {cls} out of range", "class_index")
            event = {
                "type": "labels",
                "pairs": [[d, c] for d, c in pairs],
                "submission_id": submission_id,
                "ts": _now(),
            }
            self._append_event(event)
            self.dispatch(event, synchronous=False)

    def submit_keywords(self, decisions: list[tuple[str, int, bool]]) -> None:
        with self.lock:
            self._require_status("awaiting_keywords")
            probe = self.session.ledger
            seen: set[str] = set()
            for term, cls, _accept in decisions:
                if term in seen:
                    raise ApiError(409, "keyword_conflict", f"term {term!r} decided twice in one submission")
                seen.add(term)
                if term not in self.session.corpus.vocabulary:
                    raise ApiError(404, "unknown_term", f"term {term!r} is not in the vocabulary")
                if probe.decided(term):
                    raise ApiError(409, "keyword_conflict", f"term {term!r} was already decided")
                if not 0 <= cls < self.session.labels.n_classes:
                    raise ApiError(400, "validation_error", f"class index {cls} out of range", "class_index")
            event = {
                "type": "keywords",
                "decisions": [[t, c, a] for t, c, a in decisions],
                "ts": _now(),
            }
            self._append_event(event)
            self.dispatch(event, synchronous=False)

    def request_stop(self) -> None:
        with self.lock:
            if self.status == "stopped":
                return
            self._ensure_fit_done()
            if self.status == "stopped":
                return
            event = {"type": "stop", "ts": _now()}
            self._append_event(event)
            self.dispatch(event, synchronous=False)

    def _require_status(self, expected: str) -> None:
        if self.status != expected:
            raise ApiError(
                409,
                "wrong_status",
                f"session is {self.status!r}, operation needs {expected!r}",
            )

    # -- views ----------------------------------------------------------------

    def record(self) -> dict:
        s = self.session
        return {
            "session_id": self.session_id,
            "status": self.status,
            "iteration": s.iteration,
            "n_labeled": s.labels.n_labeled,
            "batch_size": s.batch_size,
            "pending_queries": len(s.pending_queries),
            "strategy": s.strategy,
            "keywords_enabled": s.keywords_enabled,
            "class_names": list(s.labels.class_names),
            "stop_reason": s.stop_reason,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    def metrics(self) -> list[dict]:
        out = []
        positive = self.session.positive_class
        for e in self.session.metric_history:
            row = {
                "iteration": e.iteration,
                "n_labeled": e.n_labeled,
                "objective": e.objective,
                "wall_clock_seconds": e.wall_clock_seconds,
            }
            if e.metrics is not None:
                row.update(
                    precision=e.metrics.primary_precision(positive),
                    recall=e.metrics.primary_recall(positive),
                    f1=e.metrics.primary_f1(positive),
                    accuracy=e.metrics.accuracy,
                    macro_f1=e.metrics.macro_f1,
                )
            out.append(row)
        return out


def replay_session(
    directory: Path,
    corpus: Corpus,
    eval_truth: LabelStore | None = None,
) -> SessionRuntime:
    """Rebuild a session runtime from its config + event log.

    Fits run synchronously in event order, which reproduces the live
    session's parameters exactly.
    """
    directory = Path(directory)
    config = json.loads((directory / "config.json").read_text())
    runtime = SessionRuntime(
        session_id=directory.name,
        directory=directory,
        corpus=corpus,
        config=config,
        eval_truth=eval_truth,
        executor=None,
    )
    events_path = runtime.events_path
    if events_path.exists():
        for line in events_path.read_text().splitlines():
            if line.strip():
                runtime.dispatch(json.loads(line), synchronous=True)
    return runtime


class ServiceState:
    """Registry of corpora and sessions, persisted under data_dir."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        (self.data_dir / "sessions").mkdir(parents=True, exist_ok=True)
        self.registry_path = self.data_dir / "corpora.json"
        self.lock = threading.Lock()
        self.corpora: dict[str, Corpus] = {}
        self.corpus_meta: dict[str, dict] = {}
        self.truths: dict[str, dict[str, int]] = {}
        self.sessions: dict[str, SessionRuntime] = {}
        self.executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="fit")
        if self.registry_path.exists():
            self.corpus_meta = json.loads(self.registry_path.read_text())

    def register_corpus(self, dfm_path: str, texts_path: str | None, truth_path: str | None) -> tuple[str, Corpus]:
        try:
            corpus = load_corpus(dfm_path, texts_path)
        except FileNotFoundError as exc:
            raise ApiError(400, "bad_corpus", f"cannot read corpus file: {exc}", "dfm_path")
        except Exception as exc:
            raise ApiError(400, "bad_corpus", str(exc), "dfm_path")
        corpus_id = corpus.content_hash()[:24]
        with self.lock:
            self.corpora[corpus_id] = corpus
            self.corpus_meta[corpus_id] = {
                "dfm_path": str(dfm_path),
                "texts_path": str(texts_path) if texts_path else None,
                "truth_path": str(truth_path) if truth_path else None,
                "n_docs": corpus.n_docs,
                "n_features": corpus.n_features,
            }
            if truth_path:
                self.truths[corpus_id] = read_labels_file(truth_path)
            self.registry_path.write_text(json.dumps(self.corpus_meta, indent=2))
        return corpus_id, corpus

    def get_corpus(self, corpus_id: str) -> Corpus:
        with self.lock:
            if corpus_id in self.corpora:
                return self.corpora[corpus_id]
            meta = self.corpus_meta.get(corpus_id)
        if meta is None:
            raise ApiError(404, "not_found", f"unknown corpus {corpus_id!r}", "corpus_id")
        corpus = load_corpus(meta["dfm_path"], meta.get("texts_path"))
        with self.lock:
            self.corpora[corpus_id] = corpus
            if meta.get("truth_path") and corpus_id not in self.truths:
                self.truths[corpus_id] = read_labels_file(meta["truth_path"])
        return corpus

    def eval_truth_for(self, corpus_id: str, config: dict) -> LabelStore | None:
        raw = self.truths.get(corpus_id)
        if raw is None:
            return None
        hyper_mode = config["mode"]
        store = LabelStore.for_mode(
            hyper_mode, config["n_clusters"], config["k_star"],
            config["class_names"],
        )
        for doc_id, cls in raw.items():
            if 0 <= cls < store.n_classes:
                store.label(doc_id, cls)
        return store

    def create_session(self, corpus_id: str, config: dict) -> SessionRuntime:
        corpus = self.get_corpus(corpus_id)
        session_id = f"s{int(time.time() * 1000):x}{len(self.sessions):02d}"
        directory = self.data_dir / "sessions" / session_id
        directory.mkdir(parents=True)
        full_config = dict(config)
        full_config["corpus_id"] = corpus_id
        (directory / "config.json").write_text(json.dumps(full_config, indent=2))
        runtime = SessionRuntime(
            session_id=session_id,
            directory=directory,
            corpus=corpus,
            config=config,
            eval_truth=self.eval_truth_for(corpus_id, config),
            executor=self.executor,
        )
        with self.lock:
            self.sessions[session_id] = runtime
        return runtime

    def get_session(self, session_id: str) -> SessionRuntime:
        with self.lock:
            if session_id in self.sessions:
                return self.sessions[session_id]
        directory = self.data_dir / "sessions" / session_id
        if not (directory / "config.json").exists():
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        config = json.loads((directory / "config.json").read_text())
        corpus_id = config.pop("corpus_id", None)
        corpus = self.get_corpus(corpus_id)
        runtime = replay_session(directory, corpus, self.eval_truth_for(corpus_id, config))
        runtime.executor = self.executor
        with self.lock:
            self.sessions[session_id] = runtime
        return runtime


def create_app(data_dir: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    """Build the service; state persists under ``data_dir``."""
    app = FastAPI(title="activemix", version=__version__)
    state = ServiceState(data_dir)
    app.state.engine = state

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        body = {"code": exc.code, "message": exc.message}
        if exc.field:
            body["field"] = exc.field
        return JSONResponse(status_code=exc.status, content=body)

    def _translate(exc: Exception) -> ApiError:
        if isinstance(exc, ApiError):
            return exc
        if isinstance(exc, (KeywordError, LabelError)):
            return ApiError(409, "conflict", str(exc))
        if isinstance(exc, (SessionError, ModelError)):
            return ApiError(409, "conflict", str(exc))
        return ApiError(500, "internal_error", str(exc))

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/corpora", status_code=201)
    async def register_corpus(payload: dict):
        dfm_path = _require(payload, "dfm_path", str)
        corpus_id, corpus = state.register_corpus(
            dfm_path, payload.get("texts_path"), payload.get("truth_path")
        )
        return {"corpus_id": corpus_id, "n_docs": corpus.n_docs, "n_features": corpus.n_features}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(payload: dict):
        corpus_id = _require(payload, "corpus_id", str)
        corpus = state.get_corpus(corpus_id)
        config = _validate_session_config(payload.get("config", {}), corpus)
        try:
            runtime = state.create_session(corpus_id, config)
        except (SessionError, ModelError, KeywordError) as exc:
            raise ApiError(400, "validation_error", str(exc))
        return runtime.record()

    @app.get("/v1/sessions/{session_id}")
    async def get_session(session_id: str):
        return state.get_session(session_id).record()

    @app.get("/v1/sessions/{session_id}/queries")
    async def get_queries(session_id: str):
        runtime = state.get_session(session_id)
        with runtime.lock:
            runtime._require_status("awaiting_labels")
            return {"queries": runtime.session.query_items()}

    @app.post("/v1/sessions/{session_id}/labels")
    async def submit_labels(session_id: str, payload: dict):
        runtime = state.get_session(session_id)
        raw = _require(payload, "labels", list)
        pairs = []
        for item in raw:
            if not isinstance(item, dict) or "doc_id" not in item or "class_index" not in item:
                raise ApiError(400, "validation_error", "each label needs doc_id and class_index", "labels")
            pairs.append((str(item["doc_id"]), int(item["class_index"])))
        try:
            runtime.submit_labels(pairs, payload.get("submission_id"))
        except Exception as exc:
            raise _translate(exc)
        return runtime.record()

    @app.get("/v1/sessions/{session_id}/keywords")
    async def get_keywords(session_id: str):
        from .keywords import keyword_scores

        runtime = state.get_session(session_id)
        with runtime.lock:
            runtime._require_status("awaiting_keywords")
            session = runtime.session
            candidates = session.keyword_candidates()
            out = []
            for cls, terms in candidates.items():
                scores = keyword_scores(session.params, session.labels, cls)
                out.append(
                    {
                        "class_index": cls,
                        "class_name": session.labels.class_names[cls],
                        "terms": terms,
                        "log_ratios": [
                            float(scores[session.corpus.vocabulary.position(t)]) for t in terms
                        ],
                    }
                )
            return {"candidates": out, "gamma": session.ledger.gamma}

    @app.post("/v1/sessions/{session_id}/keywords")
    async def submit_keywords(session_id: str, payload: dict):
        runtime = state.get_session(session_id)
        raw = _require(payload, "decisions", list)
        decisions = []
        for item in raw:
            if not isinstance(item, dict) or "term" not in item or "accept" not in item:
                raise ApiError(400, "validation_error", "each decision needs term, class_index and accept", "decisions")
            decisions.append((str(item["term"]), int(item.get("class_index", 0)), bool(item["accept"])))
        try:
            runtime.submit_keywords(decisions)
        except Exception as exc:
            raise _translate(exc)
        return runtime.record()

    @app.get("/v1/sessions/{session_id}/metrics")
    async def get_metrics(session_id: str):
        runtime = state.get_session(session_id)
        with runtime.lock:
            return {"history": runtime.metrics()}

    @app.get("/v1/sessions/{session_id}/predictions")
    async def get_predictions(session_id: str):
        runtime = state.get_session(session_id)
        with runtime.lock:
            try:
                rows = runtime.session.export_predictions()
            except SessionError as exc:
                raise ApiError(409, "conflict", str(exc))
        body = "doc_id,class_name,probability\n" + "".join(
            f"{d},{c},{p:.12g}\n" for d, c, p in rows
        )
        return PlainTextResponse(body, media_type="text/csv")

    @app.post("/v1/sessions/{session_id}/stop")
    async def stop_session(session_id: str):
        runtime = state.get_session(session_id)
        try:
            runtime.request_stop()
        except Exception as exc:
            raise _translate(exc)
        return runtime.record()

    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.is_dir() else None
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
