"""Confusion-matrix metrics and the Monte Carlo benchmark harness.

Zero-denominator precision/recall are reported as 0 and flagged; F1 is
0 whenever precision + recall is 0. Benchmark results are plot-ready
tables, not plots.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class EvalError(ValueError):
    """Mismatched ids or malformed benchmark configuration."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts; rows are actual classes, columns predicted."""

    counts: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise EvalError("confusion matrix must be square")
        if np.any(counts < 0):
            raise EvalError("confusion counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricRecord:
    """Per-class precision/recall/F1 plus accuracy and macro-F1."""

    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    accuracy: float
    macro_f1: float
    zero_division: bool = False
    n_labeled: int | None = None
    iteration: int | None = None
    wall_clock_seconds: float | None = None

    def primary_f1(self, positive_class: int | None) -> float:
        """Positive-class F1 when a positive class is designated,
        macro-F1 otherwise."""
        if positive_class is None:
            return self.macro_f1
        return self.f1[positive_class]

    def primary_precision(self, positive_class: int | None) -> float:
        if positive_class is None:
            return float(np.mean(self.precision))
        return self.precision[positive_class]

    def primary_recall(self, positive_class: int | None) -> float:
        if positive_class is None:
            return float(np.mean(self.recall))
        return self.recall[positive_class]


def confusion(
    actual: Mapping[str, int],
    predicted: Mapping[str, int],
    n_classes: int,
    class_names: Sequence[str] = (),
) -> ConfusionMatrix:
    """Tabulate actual vs. predicted labels over identical id sets."""
    if set(actual) != set(predicted):
        missing = set(actual) ^ set(predicted)
        raise EvalError(f"actual/predicted id sets differ ({len(missing)} ids, e.g. {sorted(missing)[:3]})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for doc_id, a in actual.items():
        p = predicted[doc_id]
        if not (0 <= a < n_classes and 0 <= p < n_classes):
            raise EvalError(f"label out of range for doc {doc_id!r}")
        counts[a, p] += 1
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def metrics_from_confusion(
    matrix: ConfusionMatrix,
    n_labeled: int | None = None,
    iteration: int | None = None,
    wall_clock_seconds: float | None = None,
) -> MetricRecord:
    counts = matrix.counts
    k = counts.shape[0]
    diag = np.diag(counts).astype(np.float64)
    col = counts.sum(axis=0).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)
    zero_division = bool(matrix.total == 0 or np.any(col == 0) or np.any(row == 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / np.where(col > 0, col, 1), 0.0)
        recall = np.where(row > 0, diag / np.where(row > 0, row, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    if np.any(denom == 0):
        zero_division = True
    accuracy = float(diag.sum() / matrix.total) if matrix.total else 0.0
    return MetricRecord(
        precision=tuple(precision.tolist()),
        recall=tuple(recall.tolist()),
        f1=tuple(f1.tolist()),
        accuracy=accuracy,
        macro_f1=float(f1.mean()) if k else 0.0,
        zero_division=zero_division,
        n_labeled=n_labeled,
        iteration=iteration,
        wall_clock_seconds=wall_clock_seconds,
    )


def evaluate_predictions(
    actual: Mapping[str, int],
    predicted: Mapping[str, int],
    n_classes: int,
    **kwargs,
) -> MetricRecord:
    return metrics_from_confusion(confusion(actual, predicted, n_classes), **kwargs)


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------

BENCHMARK_CONFIG_VERSION = 1

RESULTS_HEADER = (
    "strategy",
    "seed",
    "iteration",
    "n_labeled",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "macro_f1",
    "objective",
    "wall_clock_seconds",
)

SUMMARY_HEADER = (
    "strategy",
    "iteration",
    "n_labeled",
    "mean_f1",
    "mean_precision",
    "mean_recall",
    "n_runs",
    "cumulative_wall_clock_seconds",
)


@dataclass
class BenchmarkResult:
    rows: list[dict]
    summary: list[dict]

    def write_csv(self, results_path: str | Path, summary_path: str | Path | None = None) -> None:
        with open(results_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
            writer.writeheader()
            writer.writerows(self.rows)
        if summary_path is not None:
            with open(summary_path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
                writer.writeheader()
                writer.writerows(self.summary)


def _build_benchmark_corpus(corpus_cfg: dict):
    from . import corpus as corpus_mod
    from .model import LabelStore
    from .synthetic import synthetic_corpus

    kind = corpus_cfg.get("kind")
    if kind == "synthetic":
        data = synthetic_corpus(
            n_docs=int(corpus_cfg.get("n_docs", 2000)),
            vocab_size=int(corpus_cfg.get("vocab_size", 50)),
            seed=int(corpus_cfg.get("seed", 0)),
            positive_rate=corpus_cfg.get("positive_rate"),
            class_proportions=corpus_cfg.get("class_proportions"),
            doc_length=float(corpus_cfg.get("doc_length", 40.0)),
            signal_fraction=float(corpus_cfg.get("signal_fraction", 0.2)),
            boost=float(corpus_cfg.get("boost", 8.0)),
        )
        return data.corpus, data.truth
    if kind == "files":
        loaded = corpus_mod.load_corpus(corpus_cfg["dfm"], corpus_cfg.get("texts"))
        raw = corpus_mod.read_labels_file(corpus_cfg["labels"])
        n_classes = max(raw.values()) + 1
        names = corpus_cfg.get("class_names") or (
            ("negative", "positive") if n_classes == 2 else [f"class{i}" for i in range(n_classes)]
        )
        truth = (
            LabelStore.binary(tuple(names)) if n_classes == 2 else LabelStore.multiclass(tuple(names))
        )
        truth.bulk_label(raw.items())
        if "subsample_positive_rate" in corpus_cfg:
            loaded = corpus_mod.subsample_to_rate(
                loaded,
                truth,
                float(corpus_cfg["subsample_positive_rate"]),
                int(corpus_cfg.get("subsample_seed", 0)),
            )
        return loaded, truth
    raise EvalError(f"unknown corpus kind {kind!r} in benchmark config")


def run_benchmark(config: dict, out_dir: str | Path | None = None) -> BenchmarkResult:
    """Run a (strategy x seed) grid of simulated active-learning runs.

    The config is a declarative JSON-style mapping (see README for the
    schema). Cells sharing a seed share the train/test split and seed
    batch, so strategy comparisons are paired. Wall-clock values are
    relative timings on the current host.
    """
    from .active import ActiveSession, Oracle, StoppingRule
    from .model import Hyperparams

    version = config.get("version", BENCHMARK_CONFIG_VERSION)
    if version != BENCHMARK_CONFIG_VERSION:
        raise EvalError(f"unsupported benchmark config version {version}")
    corpus, truth = _build_benchmark_corpus(config.get("corpus", {}))

    strategies = list(config.get("strategies", ["uncertainty", "random"]))
    seeds = [int(s) for s in config.get("seeds", range(int(config.get("n_seeds", 20))))]
    batch_size = int(config.get("batch_size", 20))
    steps = int(config.get("steps", 10))
    mode = config.get("mode", "binary")
    n_clusters = int(config.get("k", truth.n_classes if mode == "multiclass" else 2))
    kw_cfg = config.get("keywords", {}) or {}

    rows: list[dict] = []
    for strategy in strategies:
        for seed in seeds:
            hyper = Hyperparams.defaults(
                n_features=corpus.n_features,
                mode=mode,
                n_clusters=n_clusters,
                lam=float(config.get("lambda", 0.001)),
                alpha=config.get("alpha", 2.0),
                beta=config.get("beta", 2.0),
                k_star=config.get("k_star"),
            )
            oracle = Oracle.simulated(
                truth,
                doc_error_p=float(config.get("doc_error_p", 0.0)),
                keyword_error_p=float(kw_cfg.get("error_p", 0.0)),
            )
            budget = batch_size * (steps + 1)
            session = ActiveSession(
                corpus=corpus,
                hyper=hyper,
                stop=StoppingRule(kind="fixed_budget", budget=budget),
                batch_size=batch_size,
                strategy=strategy,
                seed=seed,
                test_fraction=float(config.get("test_fraction", 0.2)),
                eval_truth=truth,
                class_names=truth.class_names,
                keywords_enabled=bool(kw_cfg.get("enabled", False)),
                gamma=float(kw_cfg.get("gamma", 10.0)),
                keywords_per_class=int(kw_cfg.get("m", 10)),
                keyword_true_top_n=kw_cfg.get("true_top_n"),
                keyword_true_quantile=float(kw_cfg.get("true_quantile", 0.9)),
                max_iter=int(config.get("max_iter", 500)),
                tol=float(config.get("tol", 1e-8)),
            )
            state = session.run(oracle)
            positive_class = None if mode == "multiclass" else 1
            for entry in state.metric_history:
                rec = entry.metrics
                rows.append(
                    {
                        "strategy": strategy,
                        "seed": seed,
                        "iteration": entry.iteration,
                        "n_labeled": entry.n_labeled,
                        "precision": rec.primary_precision(positive_class) if rec else "",
                        "recall": rec.primary_recall(positive_class) if rec else "",
                        "f1": rec.primary_f1(positive_class) if rec else "",
                        "accuracy": rec.accuracy if rec else "",
                        "macro_f1": rec.macro_f1 if rec else "",
                        "objective": entry.objective,
                        "wall_clock_seconds": entry.wall_clock_seconds,
                    }
                )

    summary: list[dict] = []
    for strategy in strategies:
        cells = [r for r in rows if r["strategy"] == strategy]
        iterations = sorted({r["iteration"] for r in cells})
        cumulative = 0.0
        for it in iterations:
            at = [r for r in cells if r["iteration"] == it]
            f1s = [r["f1"] for r in at if r["f1"] != ""]
            cumulative += float(np.sum([r["wall_clock_seconds"] for r in at]))
            summary.append(
                {
                    "strategy": strategy,
                    "iteration": it,
                    "n_labeled": at[0]["n_labeled"],
                    "mean_f1": float(np.mean(f1s)) if f1s else "",
                    "mean_precision": float(np.mean([r["precision"] for r in at if r["precision"] != ""])) if f1s else "",
                    "mean_recall": float(np.mean([r["recall"] for r in at if r["recall"] != ""])) if f1s else "",
                    "n_runs": len(at),
                    "cumulative_wall_clock_seconds": cumulative,
                }
            )

    result = BenchmarkResult(rows=rows, summary=summary)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.write_csv(out / "results.csv", out / "summary.csv")
        (out / "config.json").write_text(json.dumps(config, indent=2, default=str))
    return result
