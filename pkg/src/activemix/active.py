"""The query-label-refit loop: batch selection, oracles, stopping rules.

One pass of the loop refits the mixture with keyword-boosted priors
(warm-started from the previous pass), evaluates on the held-out split,
checks the stopping rule, and queues the next query batch. Labels come
from an oracle: a simulator reading ground truth (optionally corrupted)
for benchmarks, or humans via the HTTP service.

Every random choice is drawn from a generator derived from
(session seed, purpose tag, iteration), so a trajectory is reproducible
and an event log can be replayed bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, SplitSpec, split_corpus
from .evaluate import MetricRecord, evaluate_predictions
from .keywords import (
    KeywordLedger,
    apply_keywords,
    propose_candidates,
    record_decisions,
    true_keyword_sets,
)
from .model import (
    Hyperparams,
    LabelStore,
    ModelParams,
    PosteriorMatrix,
    e_step,
    fit_em,
    init_naive_bayes,
    predict,
)

_TAG_SEED_BATCH = 1
_TAG_NB_INIT = 2
_TAG_SELECT = 3
_TAG_ORACLE_DOCS = 4
_TAG_ORACLE_KEYWORDS = 5


class SessionError(RuntimeError):
    """Loop driven out of order or with inconsistent configuration."""


class PendingHumanInput(SessionError):
    """A human oracle cannot be polled synchronously; the labels arrive
    through the service. Recoverable: the session is awaiting input."""


def _rng(seed: int, tag: int, iteration: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag, iteration)))


@dataclass(frozen=True)
class StoppingRule:
    """When to stop querying: a fixed label budget, a held-out F1
    improvement threshold, or prediction stability."""

    kind: str
    budget: int | None = None
    delta: float = 0.01
    patience: int = 1

    def __post_init__(self):
        if self.kind not in ("fixed_budget", "f1_delta", "stability"):
            raise SessionError(f"unknown stopping rule {self.kind!r}")
        if self.kind == "fixed_budget" and (self.budget is None or self.budget < 0):
            raise SessionError("fixed_budget rule requires a non-negative budget")
        if self.kind in ("f1_delta", "stability") and self.delta <= 0:
            raise SessionError(f"{self.kind} rule requires delta > 0")
        if self.patience < 1:
            raise SessionError("patience must be >= 1")


@dataclass(frozen=True)
class Oracle:
    """Label source: humans (through the service) or a ground-truth
    simulator that errs on each decision with the given probability."""

    kind: str
    truth: LabelStore | None = None
    doc_error_p: float = 0.0
    keyword_error_p: float = 0.0
    true_keywords: Mapping[int, set[str]] | None = None

    def __post_init__(self):
        if self.kind not in ("human", "simulated"):
            raise SessionError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "simulated" and self.truth is None:
            raise SessionError("simulated oracle requires ground-truth labels")
        for p in (self.doc_error_p, self.keyword_error_p):
            if not 0.0 <= p <= 1.0:
                raise SessionError(f"error probability {p} outside [0, 1]")

    @classmethod
    def simulated(
        cls,
        truth: LabelStore,
        doc_error_p: float = 0.0,
        keyword_error_p: float = 0.0,
        true_keywords: Mapping[int, set[str]] | None = None,
    ) -> "Oracle":
        return cls("simulated", truth, doc_error_p, keyword_error_p, true_keywords)

    @classmethod
    def human(cls) -> "Oracle":
        return cls("human")


def oracle_label(
    oracle: Oracle,
    doc_ids: Sequence[str],
    n_classes: int,
    seed: int | np.random.Generator = 0,
) -> list[tuple[str, int]]:
    """Ground-truth labels, each independently corrupted with
    probability doc_error_p (binary: flipped; multiclass: replaced by a
    uniform draw among the wrong classes)."""
    if oracle.kind == "human":
        raise PendingHumanInput("labels must be submitted through the service")
    rng = np.random.default_rng(seed)
    out = []
    for doc_id in doc_ids:
        cls = oracle.truth.class_of(doc_id)
        if cls is None:
            raise SessionError(f"simulated oracle has no truth for doc {doc_id!r}")
        if oracle.doc_error_p > 0 and rng.random() < oracle.doc_error_p:
            wrong = [c for c in range(n_classes) if c != cls]
            cls = wrong[0] if len(wrong) == 1 else int(rng.choice(wrong))
        out.append((doc_id, int(cls)))
    return out


def oracle_keyword_decisions(
    oracle: Oracle,
    candidates: Mapping[int, Sequence[str]],
    true_sets: Mapping[int, set[str]],
    seed: int | np.random.Generator = 0,
) -> list[tuple[str, int, bool]]:
    """Adjudicate candidates against the true keyword sets, flipping
    each verdict with probability keyword_error_p."""
    if oracle.kind == "human":
        raise PendingHumanInput("keyword decisions must be submitted through the service")
    rng = np.random.default_rng(seed)
    decisions = []
    for cls in sorted(candidates):
        for term in candidates[cls]:
            accept = term in true_sets.get(cls, set())
            if oracle.keyword_error_p > 0 and rng.random() < oracle.keyword_error_p:
                accept = not accept
            decisions.append((term, cls, accept))
    return decisions


def class_entropy(class_probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row, with 0 log 0 treated as 0."""
    p = np.asarray(class_probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def select_batch(
    post: PosteriorMatrix,
    labels: LabelStore,
    corpus: Corpus,
    n: int,
    strategy: str = "uncertainty",
    seed: int | np.random.Generator = 0,
) -> list[str]:
    """Pick up to n unlabeled docs to query.

    Uncertainty: descending Shannon entropy of the collapsed class
    probabilities, ties broken by ascending corpus position. Random:
    uniform without replacement, seeded.
    """
    classes = labels.row_classes(corpus)
    pool = np.flatnonzero(classes < 0)
    if len(pool) == 0:
        return []
    take = min(n, len(pool))
    if strategy == "random":
        rng = np.random.default_rng(seed)
        rows = rng.choice(pool, size=take, replace=False)
        return [corpus.doc_ids[i] for i in rows]
    if strategy != "uncertainty":
        raise SessionError(f"unknown selection strategy {strategy!r}")
    class_probs, _ = predict(post, labels)
    entropy = class_entropy(class_probs[pool])
    order = np.lexsort((pool, -entropy))
    return [corpus.doc_ids[pool[i]] for i in order[:take]]


@dataclass
class HistoryEntry:
    """One loop pass: fit objective, held-out metrics, and timing."""

    iteration: int
    n_labeled: int
    objective: float
    wall_clock_seconds: float
    metrics: MetricRecord | None = None


METRICS_CSV_HEADER = "iteration,n_labeled,precision,recall,f1,objective"


def history_csv(entries: Iterable[HistoryEntry], positive_class: int | None) -> str:
    """Session metric history as comma-separated rows. The single
    precision/recall/F1 columns carry the positive class in binary
    modes and macro averages in multiclass mode."""
    lines = [METRICS_CSV_HEADER]
    for e in entries:
        if e.metrics is None:
            p = r = f = ""
        else:
            p = f"{e.metrics.primary_precision(positive_class):.6f}"
            r = f"{e.metrics.primary_recall(positive_class):.6f}"
            f = f"{e.metrics.primary_f1(positive_class):.6f}"
        lines.append(f"{e.iteration},{e.n_labeled},{p},{r},{f},{e.objective:.6f}")
    return "\n".join(lines) + "\n"


class ActiveSession:
    """State and step logic of one active-learning session.

    Drive it either with :meth:`run` (simulated oracle, batch mode) or
    step by step (seed_queries / apply_labels / keyword_candidates /
    apply_keyword_decisions / advance), which is what the HTTP service
    and the event-log replay do.
    """

    def __init__(
        self,
        corpus: Corpus,
        hyper: Hyperparams,
        stop: StoppingRule,
        batch_size: int = 20,
        strategy: str = "uncertainty",
        seed: int = 0,
        split: SplitSpec | None = None,
        test_fraction: float = 0.2,
        eval_truth: LabelStore | None = None,
        class_names: Sequence[str] | None = None,
        keywords_enabled: bool = False,
        gamma: float = 10.0,
        keywords_per_class: int = 10,
        keyword_true_top_n: int | None = None,
        keyword_true_quantile: float = 0.9,
        initial_keywords: Mapping[int, Sequence[str]] | None = None,
        tol: float = 1e-8,
        max_iter: int = 500,
    ):
        if batch_size < 1:
            raise SessionError("batch_size must be >= 1")
        if seed < 0:
            raise SessionError("seed must be non-negative")
        if strategy not in ("uncertainty", "random"):
            raise SessionError(f"unknown selection strategy {strategy!r}")
        self.corpus = corpus
        self.hyper = hyper
        self.stop = stop
        self.batch_size = batch_size
        self.strategy = strategy
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter
        self.labels = hyper.label_store(class_names)
        self.keywords_enabled = keywords_enabled
        self.keyword_true_top_n = keyword_true_top_n
        self.keyword_true_quantile = keyword_true_quantile
        self.ledger = KeywordLedger(gamma=gamma, m=keywords_per_class)
        for cls, terms in (initial_keywords or {}).items():
            self.ledger = record_decisions(
                self.ledger, [(t, int(cls), True) for t in terms], corpus.vocabulary
            )
        if split is None:
            split = split_corpus(corpus, test_fraction, seed)
        self.split = split
        self.train_corpus = corpus.subset(split.train_ids)
        self.test_corpus = corpus.subset(split.test_ids) if split.test_ids else None
        self.eval_truth = eval_truth
        if stop.kind == "f1_delta" and (self.test_corpus is None or eval_truth is None):
            raise SessionError(
                "f1_delta stopping needs a held-out split with ground-truth labels"
            )
        if eval_truth is not None and eval_truth.n_classes != self.labels.n_classes:
            raise SessionError("eval_truth class count does not match session classes")

        self.params: ModelParams | None = None
        self.posterior: PosteriorMatrix | None = None
        self.iteration = 0
        self.pending_queries: list[str] = []
        self.metric_history: list[HistoryEntry] = []
        self.stopped = False
        self.stop_reason: str | None = None
        self._prev_hard: dict[str, int] = {}
        self._change_history: list[float] = []

    # -- queries and labels -------------------------------------------------

    def seed_queries(self) -> list[str]:
        """Queue the initial random batch from the training pool."""
        if self.pending_queries or self.labels.n_labeled or self.params is not None:
            raise SessionError("seed_queries must be the first step of a session")
        rng = _rng(self.seed, _TAG_SEED_BATCH)
        pool = list(self.train_corpus.doc_ids)
        take = min(self.batch_size, len(pool))
        rows = rng.choice(len(pool), size=take, replace=False)
        self.pending_queries = [pool[i] for i in rows]
        return list(self.pending_queries)

    def apply_labels(self, pairs: Sequence[tuple[str, int]]) -> None:
        """Record labels for queried docs; partial batches accumulate."""
        if self.stopped:
            raise SessionError("session is stopped")
        pending = set(self.pending_queries)
        for doc_id, cls in pairs:
            if doc_id not in pending:
                if self.labels.is_labeled(doc_id):
                    raise SessionError(f"doc {doc_id!r} is already labeled")
                raise SessionError(f"doc {doc_id!r} is not in the current query batch")
            self.labels.label(doc_id, cls)
            pending.discard(doc_id)
        self.pending_queries = [d for d in self.pending_queries if d in pending]

    @property
    def batch_complete(self) -> bool:
        return not self.pending_queries

    # -- keywords -----------------------------------------------------------

    def keyword_candidates(self) -> dict[int, list[str]]:
        """Per-class candidate keywords from the current fit; empty
        before the first fit. A term is proposed for at most one class
        per round (small vocabularies would otherwise repeat terms)."""
        if self.params is None:
            return {}
        out: dict[int, list[str]] = {}
        proposed: set[str] = set()
        for cls in range(self.labels.n_classes):
            ranked = propose_candidates(
                self.params, self.ledger, cls, self.corpus.vocabulary, self.labels
            )
            picked = [t for t in ranked if t not in proposed]
            proposed.update(picked)
            out[cls] = picked
        return out

    def apply_keyword_decisions(self, decisions: Sequence[tuple[str, int, bool]]) -> None:
        if self.stopped:
            raise SessionError("session is stopped")
        self.ledger = record_decisions(self.ledger, decisions, self.corpus.vocabulary)

    # -- the fit / evaluate / stop / select pass ----------------------------

    def advance(self) -> str:
        """Refit with boosted priors, evaluate, check stopping, queue
        the next batch. Returns "awaiting_labels" or "stopped"."""
        if self.stopped:
            raise SessionError("session is stopped")
        if not self.batch_complete:
            raise SessionError("current query batch is not fully labeled")
        started = time.perf_counter()
        effective = apply_keywords(self.hyper, self.ledger, self.corpus.vocabulary, self.labels)
        if self.params is None:
            init = init_naive_bayes(
                self.train_corpus,
                self.labels,
                effective,
                seed=_rng(self.seed, _TAG_NB_INIT),
                require_all_classes=False,
            )
        else:
            init = self.params
        self.params, self.posterior, trace = fit_em(
            self.train_corpus, self.labels, effective, init, tol=self.tol, max_iter=self.max_iter
        )
        metrics = self._evaluate_heldout()
        self._update_stability()
        wall = time.perf_counter() - started
        self.metric_history.append(
            HistoryEntry(
                iteration=self.iteration,
                n_labeled=self.labels.n_labeled,
                objective=trace[-1],
                wall_clock_seconds=wall,
                metrics=metrics,
            )
        )
        should_stop, reason = check_stopping(self)
        if should_stop:
            self.stopped = True
            self.stop_reason = reason
            self.pending_queries = []
            return "stopped"
        batch = select_batch(
            self.posterior,
            self.labels,
            self.train_corpus,
            self.batch_size,
            self.strategy,
            seed=_rng(self.seed, _TAG_SELECT, self.iteration),
        )
        if not batch:
            self.stopped = True
            self.stop_reason = "unlabeled pool exhausted"
            return "stopped"
        self.pending_queries = batch
        self.iteration += 1
        return "awaiting_labels"

    def force_stop(self) -> None:
        self.stopped = True
        self.stop_reason = self.stop_reason or "stopped by request"
        self.pending_queries = []

    def _evaluate_heldout(self) -> MetricRecord | None:
        if self.test_corpus is None or self.eval_truth is None:
            return None
        actual = {}
        for doc_id in self.test_corpus.doc_ids:
            cls = self.eval_truth.class_of(doc_id)
            if cls is None:
                return None
            actual[doc_id] = cls
        post = e_step(self.test_corpus, self.labels.empty_copy(), self.params)
        _, hard = predict(post, self.labels)
        predicted = {d: int(hard[i]) for i, d in enumerate(self.test_corpus.doc_ids)}
        return evaluate_predictions(
            actual,
            predicted,
            self.labels.n_classes,
            n_labeled=self.labels.n_labeled,
            iteration=self.iteration,
        )

    def _update_stability(self) -> None:
        classes = self.labels.row_classes(self.train_corpus)
        pool = np.flatnonzero(classes < 0)
        _, hard = predict(self.posterior, self.labels)
        current = {self.train_corpus.doc_ids[i]: int(hard[i]) for i in pool}
        if self._prev_hard and current:
            common = [d for d in current if d in self._prev_hard]
            if common:
                changed = sum(current[d] != self._prev_hard[d] for d in common)
                self._change_history.append(changed / len(common))
        self._prev_hard = current

    @property
    def positive_class(self) -> int | None:
        """Class whose F1 drives stopping and CSV columns: the positive
        class in binary modes, macro (None) in multiclass mode."""
        return None if self.hyper.mode == "multiclass" else 1

    # -- batch driver ---------------------------------------------------------

    def run(self, oracle: Oracle) -> "ActiveSession":
        """Drive the full loop with a simulated oracle."""
        if oracle.kind != "simulated":
            raise PendingHumanInput("batch runs need a simulated oracle; humans label via the service")
        true_sets: Mapping[int, set[str]] = {}
        if self.keywords_enabled:
            true_sets = oracle.true_keywords or self._reference_keyword_sets(oracle.truth)
        queries = self.seed_queries()
        self.apply_labels(
            oracle_label(oracle, queries, self.labels.n_classes, _rng(self.seed, _TAG_ORACLE_DOCS, 0))
        )
        while True:
            if self.advance() == "stopped":
                return self
            pairs = oracle_label(
                oracle,
                self.pending_queries,
                self.labels.n_classes,
                _rng(self.seed, _TAG_ORACLE_DOCS, self.iteration),
            )
            self.apply_labels(pairs)
            if self.keywords_enabled:
                decisions = oracle_keyword_decisions(
                    oracle,
                    self.keyword_candidates(),
                    true_sets,
                    _rng(self.seed, _TAG_ORACLE_KEYWORDS, self.iteration),
                )
                self.apply_keyword_decisions(decisions)

    def _reference_keyword_sets(self, truth: LabelStore) -> dict[int, set[str]]:
        """True keyword sets from a supervised fit on the fully labeled
        training pool (the simulated adjudicator's reference)."""
        full = self.labels.empty_copy()
        for doc_id in self.train_corpus.doc_ids:
            cls = truth.class_of(doc_id)
            if cls is None:
                raise SessionError(f"keyword oracle needs truth for doc {doc_id!r}")
            full.label(doc_id, cls)
        reference = init_naive_bayes(
            self.train_corpus, full, self.hyper, seed=_rng(self.seed, _TAG_NB_INIT)
        )
        return true_keyword_sets(
            reference,
            self.labels,
            self.corpus.vocabulary,
            quantile=self.keyword_true_quantile,
            top_n=self.keyword_true_top_n,
        )

    # -- exports ----------------------------------------------------------------

    def export_predictions(self) -> list[tuple[str, str, float]]:
        """(doc_id, class_name, probability) for every corpus doc;
        hand-labeled docs carry their label with probability 1."""
        if self.params is None:
            raise SessionError("no fitted model yet")
        post = e_step(self.corpus, self.labels, self.params)
        class_probs, hard = predict(post, self.labels)
        rows = []
        for i, doc_id in enumerate(self.corpus.doc_ids):
            cls = self.labels.class_of(doc_id)
            if cls is not None:
                rows.append((doc_id, self.labels.class_names[cls], 1.0))
            else:
                c = int(hard[i])
                rows.append((doc_id, self.labels.class_names[c], float(class_probs[i, c])))
        return rows

    def query_items(self) -> list[dict]:
        """Pending queries with display context for human labelers."""
        items = []
        probs_by_id: dict[str, np.ndarray] = {}
        if self.posterior is not None:
            class_probs, _ = predict(self.posterior, self.labels)
            entropies = class_entropy(class_probs)
            for i, d in enumerate(self.train_corpus.doc_ids):
                probs_by_id[d] = (class_probs[i], float(entropies[i]))
        for doc_id in self.pending_queries:
            probs, entropy = probs_by_id.get(doc_id, (None, None))
            items.append(
                {
                    "doc_id": doc_id,
                    "raw_text": self.corpus.text_of(doc_id),
                    "class_probabilities": None if probs is None else [float(p) for p in probs],
                    "entropy": entropy,
                }
            )
        return items


def check_stopping(session: ActiveSession) -> tuple[bool, str | None]:
    """Evaluate the session's stopping rule against its history."""
    rule = session.stop
    if rule.kind == "fixed_budget":
        if session.labels.n_labeled >= rule.budget:
            return True, f"label budget reached ({session.labels.n_labeled}/{rule.budget})"
        return False, None
    if rule.kind == "f1_delta":
        f1s = [
            e.metrics.primary_f1(session.positive_class)
            for e in session.metric_history
            if e.metrics is not None
        ]
        if len(f1s) < 2:
            return False, None
        run = 0
        for prev, cur in zip(f1s[:-1], f1s[1:]):
            run = run + 1 if (cur - prev) < rule.delta else 0
        if run >= rule.patience:
            return True, (
                f"held-out F1 improved by less than {rule.delta} for {run} consecutive checks"
            )
        return False, None
    # stability
    changes = session._change_history
    if len(changes) < rule.patience:
        return False, None
    tail = changes[-rule.patience:]
    if all(c < rule.delta for c in tail):
        return True, (
            f"prediction changes below {rule.delta} for {rule.patience} consecutive checks"
        )
    return False, None


def run_active_loop(
    corpus: Corpus,
    session: ActiveSession,
    oracle: Oracle,
) -> tuple[ActiveSession, list[tuple[str, str, float]]]:
    """Convenience wrapper: drive the loop to its stop and export
    predictions for every document."""
    if corpus is not session.corpus:
        raise SessionError("session was built for a different corpus")
    session.run(oracle)
    return session, session.export_predictions()
