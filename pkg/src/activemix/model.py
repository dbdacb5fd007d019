"""Semi-supervised multinomial mixture classifier fit by EM.

The engine supports three labeling modes through one code path:

* ``binary`` — two clusters, cluster k is class k;
* ``multi_cluster_binary`` — K clusters where one designated cluster
  ``k_star`` carries the positive class and the remaining K-1 clusters
  jointly model the negative class;
* ``multiclass`` — K clusters, cluster k is class k.

What unifies them: a labeled document restricts its responsibilities to
the clusters mapped to its class (degenerate when the class owns a
single cluster, renormalized over the class's clusters otherwise),
while unlabeled documents keep full support and enter every estimate
downweighted by ``lam``. All probability arithmetic is in log space;
multinomial normalizing constants are dropped throughout, so objective
values are comparable only within a run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .corpus import Corpus

UNLABELED = -1

MODES = ("binary", "multi_cluster_binary", "multiclass")


class ModelError(RuntimeError):
    """Numerical or configuration failure inside the mixture engine."""


class LabelError(ValueError):
    """Invalid label assignment."""


class LabelStore:
    """Per-document class assignments plus the cluster -> class map.

    Class indices are dense 0..K_class-1. ``cluster_to_class`` collapses
    mixture clusters onto classes; it is the identity in binary and
    multiclass modes, and maps exactly one cluster (``k_star``) to the
    positive class in multi-cluster binary mode.
    """

    def __init__(
        self,
        class_names: Sequence[str],
        cluster_to_class: Sequence[int],
        assignments: Mapping[str, int] | None = None,
    ):
        self.class_names = tuple(class_names)
        self.cluster_to_class = np.asarray(cluster_to_class, dtype=np.int64)
        self.cluster_to_class.flags.writeable = False
        if len(self.class_names) < 2:
            raise LabelError("need at least two classes")
        present = set(self.cluster_to_class.tolist())
        if present != set(range(len(self.class_names))):
            raise LabelError(
                f"cluster_to_class must cover classes 0..{len(self.class_names) - 1}"
            )
        self._assignments: dict[str, int] = {}
        for doc_id, cls in (assignments or {}).items():
            self.label(doc_id, cls)

    @classmethod
    def binary(cls, class_names: Sequence[str] = ("negative", "positive")) -> "LabelStore":
        return cls(class_names, cluster_to_class=[0, 1])

    @classmethod
    def multiclass(cls, class_names: Sequence[str]) -> "LabelStore":
        return cls(class_names, cluster_to_class=list(range(len(class_names))))

    @classmethod
    def multi_cluster_binary(
        cls,
        n_clusters: int,
        k_star: int,
        class_names: Sequence[str] = ("negative", "positive"),
    ) -> "LabelStore":
        if len(class_names) != 2:
            raise LabelError("multi-cluster binary mode has exactly two classes")
        if not 0 <= k_star < n_clusters:
            raise LabelError(f"k_star {k_star} out of range for {n_clusters} clusters")
        mapping = [1 if k == k_star else 0 for k in range(n_clusters)]
        return cls(class_names, cluster_to_class=mapping)

    @classmethod
    def for_mode(
        cls,
        mode: str,
        n_clusters: int,
        k_star: int | None = None,
        class_names: Sequence[str] | None = None,
    ) -> "LabelStore":
        if mode == "binary":
            return cls.binary(class_names or ("negative", "positive"))
        if mode == "multiclass":
            return cls.multiclass(class_names or tuple(f"class{k}" for k in range(n_clusters)))
        if mode == "multi_cluster_binary":
            if k_star is None:
                raise LabelError("multi_cluster_binary mode requires k_star")
            return cls.multi_cluster_binary(n_clusters, k_star, class_names or ("negative", "positive"))
        raise LabelError(f"unknown mode {mode!r}")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_to_class)

    def clusters_of(self, cls_idx: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_to_class == cls_idx)

    def class_mask(self) -> np.ndarray:
        """(K_class, K) boolean matrix: mask[c, k] iff cluster k maps to class c."""
        return self.cluster_to_class[None, :] == np.arange(self.n_classes)[:, None]

    def label(self, doc_id: str, cls_idx: int) -> None:
        if not 0 <= cls_idx < self.n_classes:
            raise LabelError(f"class index {cls_idx} out of range [0, {self.n_classes})")
        if doc_id in self._assignments:
            raise LabelError(f"doc {doc_id!r} is already labeled")
        self._assignments[doc_id] = int(cls_idx)

    def bulk_label(self, pairs: Iterable[tuple[str, int]]) -> None:
        for doc_id, cls_idx in pairs:
            self.label(doc_id, cls_idx)

    def class_of(self, doc_id: str) -> int | None:
        return self._assignments.get(doc_id)

    def is_labeled(self, doc_id: str) -> bool:
        return doc_id in self._assignments

    def labeled_ids(self) -> tuple[str, ...]:
        return tuple(self._assignments)

    @property
    def n_labeled(self) -> int:
        return len(self._assignments)

    def assignments(self) -> dict[str, int]:
        return dict(self._assignments)

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_classes, dtype=np.int64)
        for cls in self._assignments.values():
            counts[cls] += 1
        return counts

    def row_classes(self, corpus: Corpus) -> np.ndarray:
        """Per-row class index aligned to the corpus; UNLABELED where unknown."""
        out = np.full(corpus.n_docs, UNLABELED, dtype=np.int64)
        for doc_id, cls in self._assignments.items():
            row = corpus._row_of.get(doc_id)
            if row is not None:
                out[row] = cls
        return out

    def copy(self) -> "LabelStore":
        return LabelStore(self.class_names, self.cluster_to_class, self._assignments)

    def empty_copy(self) -> "LabelStore":
        return LabelStore(self.class_names, self.cluster_to_class)


@dataclass(frozen=True)
class Hyperparams:
    """Priors and weights: Dirichlet alpha on proportions, Dirichlet
    beta on each word-class column, and the unlabeled weight lam."""

    alpha: np.ndarray
    beta: np.ndarray
    lam: float = 0.001
    mode: str = "binary"
    k_star: int | None = None

    def __post_init__(self):
        alpha = np.ascontiguousarray(np.asarray(self.alpha, dtype=np.float64))
        beta = np.ascontiguousarray(np.asarray(self.beta, dtype=np.float64))
        if alpha.ndim != 1:
            raise ModelError("alpha must be a vector of length K")
        k = alpha.shape[0]
        if k < 2:
            raise ModelError("need at least two clusters")
        if beta.ndim != 2 or beta.shape[1] != k:
            raise ModelError(f"beta must be V x {k}, got {beta.shape}")
        if np.any(alpha <= 0):
            raise ModelError("all alpha entries must be positive")
        if np.any(beta < 1):
            raise ModelError("all beta entries must be >= 1 (MAP updates use beta - 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ModelError(f"lambda must be in [0, 1], got {self.lam}")
        if self.mode not in MODES:
            raise ModelError(f"unknown mode {self.mode!r}")
        if self.mode == "binary" and k != 2:
            raise ModelError("binary mode requires exactly 2 clusters")
        if self.mode == "multi_cluster_binary":
            if self.k_star is None or not 0 <= self.k_star < k:
                raise ModelError(f"k_star must be in [0, {k}) in multi-cluster binary mode")
        elif self.k_star is not None:
            raise ModelError(f"k_star is only meaningful in multi_cluster_binary mode")
        alpha.flags.writeable = False
        beta.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def defaults(
        cls,
        n_features: int,
        mode: str = "binary",
        n_clusters: int = 2,
        lam: float = 0.001,
        alpha: float | Sequence[float] = 2.0,
        beta: float | np.ndarray = 2.0,
        k_star: int | None = None,
    ) -> "Hyperparams":
        a = np.full(n_clusters, float(alpha)) if np.isscalar(alpha) else np.asarray(alpha, dtype=np.float64)
        b = np.full((n_features, len(a)), float(beta)) if np.isscalar(beta) else np.asarray(beta, dtype=np.float64)
        return cls(alpha=a, beta=b, lam=lam, mode=mode, k_star=k_star)

    @property
    def n_clusters(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_features(self) -> int:
        return self.beta.shape[0]

    def with_beta(self, beta: np.ndarray) -> "Hyperparams":
        return dataclasses.replace(self, beta=beta)

    def with_lam(self, lam: float) -> "Hyperparams":
        return dataclasses.replace(self, lam=lam)

    def label_store(self, class_names: Sequence[str] | None = None) -> LabelStore:
        return LabelStore.for_mode(self.mode, self.n_clusters, self.k_star, class_names)


@dataclass(frozen=True)
class ModelParams:
    """Log-space mixture parameters: log proportions and the V x K
    log word-class matrix. Immutable snapshot."""

    log_pi: np.ndarray
    log_eta: np.ndarray

    def __post_init__(self):
        log_pi = np.ascontiguousarray(np.asarray(self.log_pi, dtype=np.float64))
        log_eta = np.ascontiguousarray(np.asarray(self.log_eta, dtype=np.float64))
        if log_pi.ndim != 1 or log_eta.ndim != 2 or log_eta.shape[1] != log_pi.shape[0]:
            raise ModelError(
                f"inconsistent parameter shapes {log_pi.shape} / {log_eta.shape}"
            )
        if not (np.all(np.isfinite(log_pi)) and np.all(np.isfinite(log_eta))):
            raise ModelError("non-finite model parameters")
        if abs(np.exp(log_pi).sum() - 1.0) > 1e-10:
            raise ModelError("exp(log_pi) must sum to 1")
        col_sums = np.exp(log_eta).sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > 1e-10):
            raise ModelError("each exp(log_eta) column must sum to 1")
        log_pi.flags.writeable = False
        log_eta.flags.writeable = False
        object.__setattr__(self, "log_pi", log_pi)
        object.__setattr__(self, "log_eta", log_eta)

    @property
    def n_clusters(self) -> int:
        return self.log_pi.shape[0]

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    @property
    def eta(self) -> np.ndarray:
        return np.exp(self.log_eta)


@dataclass(frozen=True)
class PosteriorMatrix:
    """N x K cluster responsibilities, rows aligned to corpus order."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if probs.ndim != 2:
            raise ModelError("posterior must be an N x K matrix")
        if probs.size and (np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-10)):
            raise ModelError("posterior rows must be probability vectors")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n_docs(self) -> int:
        return self.probs.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.probs.shape[1]


def _log_scores(corpus: Corpus, params: ModelParams) -> np.ndarray:
    """Per-document unnormalized log posterior: D @ log_eta + log_pi."""
    return corpus.dfm @ params.log_eta + params.log_pi[None, :]


def _support_mask(labels: LabelStore, classes: np.ndarray) -> np.ndarray:
    """Allowed-cluster mask per row: full support when unlabeled, the
    class's clusters otherwise."""
    n, k = classes.shape[0], labels.n_clusters
    mask = np.ones((n, k), dtype=bool)
    lab = classes >= 0
    if lab.any():
        mask[lab] = labels.class_mask()[classes[lab]]
    return mask


def _normalize_masked(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    masked = np.where(mask, scores, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - peak)
    return expd / expd.sum(axis=1, keepdims=True)


def e_step(corpus: Corpus, labels: LabelStore, params: ModelParams) -> PosteriorMatrix:
    """Cluster responsibilities given current parameters.

    Unlabeled docs get the full softmax of D @ log_eta + log_pi (an
    empty doc therefore falls back to the prior proportions); labeled
    docs are restricted to their class's clusters and renormalized.
    """
    scores = _log_scores(corpus, params)
    classes = labels.row_classes(corpus)
    probs = _normalize_masked(scores, _support_mask(labels, classes))
    return PosteriorMatrix(probs)


def m_step(
    corpus: Corpus,
    labels: LabelStore,
    post: PosteriorMatrix,
    hyper: Hyperparams,
) -> ModelParams:
    """Closed-form MAP update of proportions and word-class columns.

    Every cluster mass is (prior - 1) plus responsibility-weighted
    counts, with unlabeled rows weighted by lam; results renormalized in
    log space. Raises if any unnormalized mass is non-positive.
    """
    if post.probs.shape != (corpus.n_docs, hyper.n_clusters):
        raise ModelError("posterior shape does not match corpus/hyperparams")
    classes = labels.row_classes(corpus)
    weights = np.where(classes >= 0, 1.0, hyper.lam)
    weighted = post.probs * weights[:, None]
    pi_mass = (hyper.alpha - 1.0) + weighted.sum(axis=0)
    eta_mass = (hyper.beta - 1.0) + (corpus.dfm.T @ weighted)
    if np.any(pi_mass <= 0) or np.any(eta_mass <= 0):
        raise ModelError(
            "non-positive MAP mass; use priors > 1 (alpha, beta) so that "
            "every cluster and word keeps positive probability"
        )
    log_pi = np.log(pi_mass) - np.log(pi_mass.sum())
    log_eta = np.log(eta_mass) - np.log(eta_mass.sum(axis=0, keepdims=True))
    return ModelParams(log_pi=log_pi, log_eta=log_eta)


def log_posterior_objective(
    corpus: Corpus,
    labels: LabelStore,
    params: ModelParams,
    hyper: Hyperparams,
) -> float:
    """Observed-data log posterior (multinomial coefficients dropped).

    Prior terms plus, per labeled doc, the log mass of its class's
    clusters, plus lam times the full log mixture mass of each
    unlabeled doc.
    """
    scores = _log_scores(corpus, params)
    classes = labels.row_classes(corpus)
    masked = np.where(_support_mask(labels, classes), scores, -np.inf)
    row_ll = logsumexp(masked, axis=1) if masked.size else np.zeros(0)
    lab = classes >= 0
    value = float((hyper.alpha - 1.0) @ params.log_pi)
    value += float(((hyper.beta - 1.0) * params.log_eta).sum())
    value += float(row_ll[lab].sum())
    value += hyper.lam * float(row_ll[~lab].sum())
    return value


def init_naive_bayes(
    corpus: Corpus,
    labels: LabelStore,
    hyper: Hyperparams,
    seed: int = 0,
    require_all_classes: bool = True,
) -> ModelParams:
    """Supervised MAP start from the labeled documents alone.

    Equivalent to one m_step on the labeled docs with zero unlabeled
    weight. When a class owns several clusters, each of its docs gets a
    seeded symmetric-Dirichlet(5) responsibility draw over those
    clusters: identical columns are a stationary point of EM, so the
    jitter breaks the symmetry.

    A class with no labeled docs is an error by default; with
    ``require_all_classes=False`` it falls back to its prior-mean
    parameters, which is how the active loop copes with imbalanced
    corpora whose random seed batch misses the rare class.
    """
    classes = labels.row_classes(corpus)
    counts = np.zeros(labels.n_classes, dtype=np.int64)
    for c in classes[classes >= 0]:
        counts[c] += 1
    missing = [labels.class_names[c] for c in range(labels.n_classes) if counts[c] == 0]
    if missing and require_all_classes:
        raise ModelError(
            f"no labeled documents for class(es) {missing}; label at least one seed doc per class"
        )
    rng = np.random.default_rng(seed)
    # Unlabeled rows carry zero weight here (lam = 0); uniform keeps them valid.
    resp = np.full((corpus.n_docs, labels.n_clusters), 1.0 / labels.n_clusters)
    for c in range(labels.n_classes):
        rows = np.flatnonzero(classes == c)
        clusters = labels.clusters_of(c)
        resp[rows, :] = 0.0
        if len(clusters) == 1:
            resp[rows, clusters[0]] = 1.0
        else:
            resp[np.ix_(rows, clusters)] = rng.dirichlet(np.full(len(clusters), 5.0), size=len(rows))
    return m_step(corpus, labels, PosteriorMatrix(resp), hyper.with_lam(0.0))


def fit_em(
    corpus: Corpus,
    labels: LabelStore,
    hyper: Hyperparams,
    init: ModelParams,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[ModelParams, PosteriorMatrix, list[float]]:
    """Run EM from ``init`` until the relative objective change drops
    below ``tol`` or ``max_iter`` passes elapse.

    Returns the final parameters, the responsibilities under them, and
    the objective trace (initial value included; non-decreasing up to
    floating-point slack).
    """
    if max_iter < 1:
        raise ModelError("max_iter must be >= 1")
    params = init
    objective = log_posterior_objective(corpus, labels, params, hyper)
    if not np.isfinite(objective):
        raise ModelError("non-finite objective at initialization")
    trace = [objective]
    for _ in range(max_iter):
        post = e_step(corpus, labels, params)
        params = m_step(corpus, labels, post, hyper)
        previous, objective = objective, log_posterior_objective(corpus, labels, params, hyper)
        if not np.isfinite(objective):
            raise ModelError("objective became non-finite during EM")
        trace.append(objective)
        if abs(objective - previous) / (abs(previous) + 1e-12) < tol:
            break
    return params, e_step(corpus, labels, params), trace


def predict(post: PosteriorMatrix, labels: LabelStore) -> tuple[np.ndarray, np.ndarray]:
    """Collapse cluster responsibilities to class probabilities and
    hard labels.

    Class probability sums the responsibilities of the clusters mapped
    to the class. Argmax breaks exact ties toward the lowest class
    index, so a binary doc at exactly 0.5 is called negative.
    """
    collapse = labels.class_mask().astype(np.float64)
    class_probs = post.probs @ collapse.T
    hard = np.argmax(class_probs, axis=1)
    return class_probs, hard


CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    hyper: Hyperparams,
    params: ModelParams,
    vocab_hash: str,
) -> None:
    """Binary dump of hyperparams + parameters; reload is bit-exact."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "mode": hyper.mode,
        "lam": hyper.lam,
        "k_star": hyper.k_star,
        "vocab_hash": vocab_hash,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
            alpha=hyper.alpha,
            beta=hyper.beta,
            log_pi=params.log_pi,
            log_eta=params.log_eta,
        )


def load_checkpoint(path: str | Path) -> tuple[Hyperparams, ModelParams, str]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {meta.get('format_version')}")
        hyper = Hyperparams(
            alpha=data["alpha"],
            beta=data["beta"],
            lam=float(meta["lam"]),
            mode=meta["mode"],
            k_star=meta["k_star"],
        )
        params = ModelParams(log_pi=data["log_pi"], log_eta=data["log_eta"])
    return hyper, params, meta["vocab_hash"]
