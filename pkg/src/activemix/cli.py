"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every command writes a ``run.json`` echoing its resolved configuration
into its output directory. A ``--config`` JSON file may provide any
flag's value under the same (underscored) key; explicit flags win.
"""

from __future__ import annotations

import json
import socket
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .active import ActiveSession, Oracle, SessionError, StoppingRule, history_csv
from .corpus import (
    Corpus,
    CorpusFormatError,
    corpus_from_texts,
    load_corpus,
    read_labels_file,
    read_texts_file,
    split_corpus,
    write_corpus,
    write_labels_file,
)
from .evaluate import EvalError, evaluate_predictions, run_benchmark
from .keywords import KeywordError, apply_keywords, read_ledger_file
from .model import (
    Hyperparams,
    LabelError,
    LabelStore,
    ModelError,
    e_step,
    fit_em,
    init_naive_bayes,
    predict,
    save_checkpoint,
)
from .synthetic import synthetic_corpus

_RUNTIME_ERRORS = (
    CorpusFormatError,
    ModelError,
    LabelError,
    KeywordError,
    SessionError,
    EvalError,
    OSError,
)


def _merged(ctx: click.Context, config_path: str | None, **values):
    """Flag values, with config-file keys filling in non-explicit flags."""
    file_cfg = {}
    if config_path:
        file_cfg = json.loads(Path(config_path).read_text())
    out = {}
    for key, value in values.items():
        source = ctx.get_parameter_source(key)
        explicit = source == click.core.ParameterSource.COMMANDLINE
        out[key] = value if explicit or key not in file_cfg else file_cfg[key]
    return out


def _write_run_json(out_dir: Path, command: str, cfg: dict) -> None:
    record = {"command": command, "version": __version__}
    record.update({k: v for k, v in cfg.items() if not isinstance(v, (Corpus,))})
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, default=str) + "\n")


def _label_store_for(mode: str, n_clusters: int, k_star, labels_raw: dict, class_names=None) -> LabelStore:
    store = LabelStore.for_mode(mode, n_clusters, k_star, class_names)
    for doc_id, cls in labels_raw.items():
        if cls >= store.n_classes:
            raise LabelError(
                f"label {cls} for doc {doc_id!r} exceeds the {store.n_classes}-class scheme"
            )
        store.label(doc_id, cls)
    return store


def _resolve_clusters(mode: str, k: int | None, n_classes: int) -> int:
    if mode == "binary":
        return 2
    if mode == "multiclass":
        return k or n_classes
    if k is None:
        raise SessionError("multi_cluster_binary mode requires --k")
    return k


def _parse_stop(spec: str) -> StoppingRule:
    """budget:620 | f1:0.01[:patience] | stability:0.01[:patience]"""
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "budget":
            return StoppingRule(kind="fixed_budget", budget=int(parts[1]))
        if kind == "f1":
            return StoppingRule(
                kind="f1_delta",
                delta=float(parts[1]) if len(parts) > 1 else 0.01,
                patience=int(parts[2]) if len(parts) > 2 else 1,
            )
        if kind == "stability":
            return StoppingRule(
                kind="stability",
                delta=float(parts[1]) if len(parts) > 1 else 0.01,
                patience=int(parts[2]) if len(parts) > 2 else 1,
            )
    except (IndexError, ValueError):
        pass
    raise click.UsageError(
        f"cannot parse --stop {spec!r}; expected budget:N, f1:DELTA[:PATIENCE] or stability:DELTA[:PATIENCE]"
    )


def _write_predictions(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("doc_id,class_name,probability\n")
        for doc_id, name, prob in rows:
            fh.write(f"{doc_id},{name},{prob:.12g}\n")


@click.group()
@click.version_option(__version__)
def main():
    """Semi-supervised text classification with active labeling."""


@main.command("fit")
@click.option("--dfm", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--texts", "texts_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["binary", "multi_cluster_binary", "multiclass"]), default="binary")
@click.option("--k", type=int, default=None, help="Number of mixture clusters.")
@click.option("--k-star", type=int, default=None, help="Positive cluster (multi_cluster_binary).")
@click.option("--lambda", "lam", type=float, default=0.001, help="Unlabeled-document weight.")
@click.option("--alpha", type=float, default=2.0)
@click.option("--beta", type=float, default=2.0)
@click.option("--keywords", "keywords_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--gamma", type=float, default=10.0)
@click.option("--tol", type=float, default=1e-8)
@click.option("--max-iter", type=int, default=500)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(file_okay=False), default="fit_out")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def cmd_fit(ctx, dfm, labels_path, texts_path, mode, k, k_star, lam, alpha, beta,
            keywords_path, gamma, tol, max_iter, seed, out_dir, config_path):
    """Fit once (no querying); write checkpoint and predictions."""
    cfg = _merged(ctx, config_path, dfm=dfm, labels_path=labels_path, texts_path=texts_path,
                  mode=mode, k=k, k_star=k_star, lam=lam, alpha=alpha, beta=beta,
                  keywords_path=keywords_path, gamma=gamma, tol=tol, max_iter=max_iter,
                  seed=seed, out_dir=out_dir)
    try:
        corpus = load_corpus(cfg["dfm"], cfg["texts_path"])
        labels_raw = read_labels_file(cfg["labels_path"])
        n_classes = max(labels_raw.values(), default=1) + 1
        n_clusters = _resolve_clusters(cfg["mode"], cfg["k"], n_classes)
        store = _label_store_for(cfg["mode"], n_clusters, cfg["k_star"], labels_raw)
        hyper = Hyperparams.defaults(
            n_features=corpus.n_features, mode=cfg["mode"], n_clusters=n_clusters,
            lam=cfg["lam"], alpha=cfg["alpha"], beta=cfg["beta"], k_star=cfg["k_star"],
        )
        if cfg["keywords_path"]:
            ledger = read_ledger_file(cfg["keywords_path"], store.class_names, gamma=cfg["gamma"])
            hyper = apply_keywords(hyper, ledger, corpus.vocabulary, store)
        init = init_naive_bayes(corpus, store, hyper, seed=cfg["seed"])
        params, post, trace = fit_em(corpus, store, hyper, init, tol=cfg["tol"], max_iter=cfg["max_iter"])
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.npz", hyper, params, corpus.vocabulary.content_hash())
        class_probs, hard = predict(post, store)
        rows = []
        for i, doc_id in enumerate(corpus.doc_ids):
            cls = store.class_of(doc_id)
            if cls is not None:
                rows.append((doc_id, store.class_names[cls], 1.0))
            else:
                rows.append((doc_id, store.class_names[int(hard[i])], float(class_probs[i, hard[i]])))
        _write_predictions(out / "predictions.csv", rows)
        _write_run_json(out, "fit", cfg)
        click.echo(
            f"fit: {len(trace) - 1} EM iterations, objective {trace[0]:.4f} -> {trace[-1]:.4f}"
        )
        click.echo(f"wrote {out / 'checkpoint.npz'} and {out / 'predictions.csv'}")
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc))


@main.command("active-sim")
@click.option("--dfm", type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "labels_path", type=click.Path(exists=True, dir_okay=False),
              help="Ground-truth labels for the simulated oracle.")
@click.option("--texts", "texts_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--synthetic", "synthetic_spec", type=str, default=None,
              help='JSON generator spec, e.g. \'{"n_docs":2000,"vocab_size":50,"positive_rate":0.05}\'.')
@click.option("--mode", type=click.Choice(["binary", "multi_cluster_binary", "multiclass"]), default="binary")
@click.option("--k", type=int, default=None)
@click.option("--k-star", type=int, default=None)
@click.option("--lambda", "lam", type=float, default=0.001)
@click.option("--alpha", type=float, default=2.0)
@click.option("--beta", type=float, default=2.0)
@click.option("--strategy", type=click.Choice(["uncertainty", "random"]), default="uncertainty")
@click.option("--batch-size", type=int, default=20)
@click.option("--stop", "stop_spec", type=str, default="budget:400",
              help="budget:N | f1:DELTA[:PATIENCE] | stability:DELTA[:PATIENCE]")
@click.option("--doc-error-p", type=float, default=0.0)
@click.option("--keyword-error-p", type=float, default=0.0)
@click.option("--keywords-enabled", is_flag=True, default=False)
@click.option("--gamma", type=float, default=10.0)
@click.option("--m", "keywords_per_class", type=int, default=10)
@click.option("--keyword-true-top-n", type=int, default=None)
@click.option("--test-fraction", type=float, default=0.2)
@click.option("--tol", type=float, default=1e-8)
@click.option("--max-iter", type=int, default=500)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(file_okay=False), default="active_out")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def cmd_active_sim(ctx, dfm, labels_path, texts_path, synthetic_spec, mode, k, k_star,
                   lam, alpha, beta, strategy, batch_size, stop_spec, doc_error_p,
                   keyword_error_p, keywords_enabled, gamma, keywords_per_class,
                   keyword_true_top_n, test_fraction, tol, max_iter, seed, out_dir,
                   config_path):
    """Run the active loop against a simulated oracle; write metrics."""
    cfg = _merged(ctx, config_path, dfm=dfm, labels_path=labels_path, texts_path=texts_path,
                  synthetic_spec=synthetic_spec, mode=mode, k=k, k_star=k_star, lam=lam,
                  alpha=alpha, beta=beta, strategy=strategy, batch_size=batch_size,
                  stop_spec=stop_spec, doc_error_p=doc_error_p, keyword_error_p=keyword_error_p,
                  keywords_enabled=keywords_enabled, gamma=gamma,
                  keywords_per_class=keywords_per_class, keyword_true_top_n=keyword_true_top_n,
                  test_fraction=test_fraction, tol=tol, max_iter=max_iter, seed=seed,
                  out_dir=out_dir)
    if not cfg["synthetic_spec"] and not (cfg["dfm"] and cfg["labels_path"]):
        raise click.UsageError("provide --dfm and --labels, or --synthetic")
    try:
        if cfg["synthetic_spec"]:
            spec = json.loads(cfg["synthetic_spec"])
            spec.setdefault("seed", cfg["seed"])
            data = synthetic_corpus(**spec)
            corpus, truth = data.corpus, data.truth
        else:
            corpus = load_corpus(cfg["dfm"], cfg["texts_path"])
            labels_raw = read_labels_file(cfg["labels_path"])
            n_classes = max(labels_raw.values(), default=1) + 1
            names = ("negative", "positive") if n_classes == 2 else tuple(f"class{i}" for i in range(n_classes))
            truth = LabelStore.binary(names) if n_classes == 2 else LabelStore.multiclass(names)
            truth.bulk_label(labels_raw.items())
        n_clusters = _resolve_clusters(cfg["mode"], cfg["k"], truth.n_classes)
        hyper = Hyperparams.defaults(
            n_features=corpus.n_features, mode=cfg["mode"], n_clusters=n_clusters,
            lam=cfg["lam"], alpha=cfg["alpha"], beta=cfg["beta"], k_star=cfg["k_star"],
        )
        session = ActiveSession(
            corpus=corpus,
            hyper=hyper,
            stop=_parse_stop(cfg["stop_spec"]),
            batch_size=cfg["batch_size"],
            strategy=cfg["strategy"],
            seed=cfg["seed"],
            test_fraction=cfg["test_fraction"],
            eval_truth=truth,
            class_names=truth.class_names if truth.n_classes == hyper.label_store().n_classes else None,
            keywords_enabled=cfg["keywords_enabled"],
            gamma=cfg["gamma"],
            keywords_per_class=cfg["keywords_per_class"],
            keyword_true_top_n=cfg["keyword_true_top_n"],
            tol=cfg["tol"],
            max_iter=cfg["max_iter"],
        )
        oracle = Oracle.simulated(truth, doc_error_p=cfg["doc_error_p"], keyword_error_p=cfg["keyword_error_p"])
        session.run(oracle)
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(history_csv(session.metric_history, session.positive_class))
        _write_predictions(out / "predictions.csv", session.export_predictions())
        save_checkpoint(out / "checkpoint.npz", session.hyper, session.params,
                        corpus.vocabulary.content_hash())
        _write_run_json(out, "active-sim", cfg)
        last = session.metric_history[-1]
        f1_txt = f", final F1 {last.metrics.primary_f1(session.positive_class):.4f}" if last.metrics else ""
        click.echo(
            f"active-sim: {len(session.metric_history)} iterations, "
            f"{session.labels.n_labeled} labels{f1_txt}"
        )
        click.echo(f"stopped: {session.stop_reason}")
        click.echo(f"wrote metrics to {out / 'metrics.csv'}")
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc))


@main.command("benchmark")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default="benchmark_out")
def cmd_benchmark(config_path, out_dir):
    """Run a strategy x seed benchmark grid from a JSON config."""
    try:
        config = json.loads(Path(config_path).read_text())
        result = run_benchmark(config, out_dir=out_dir)
        finals: dict[str, list[float]] = {}
        for row in result.rows:
            if row["f1"] != "":
                finals.setdefault(row["strategy"], []).append((row["iteration"], row["f1"]))
        for strategy, pairs in finals.items():
            last_iter = max(i for i, _ in pairs)
            mean_final = float(np.mean([f for i, f in pairs if i == last_iter]))
            click.echo(f"{strategy}: mean final F1 {mean_final:.4f} at iteration {last_iter}")
        click.echo(f"wrote {Path(out_dir) / 'results.csv'} and summary.csv")
    except (_RUNTIME_ERRORS, json.JSONDecodeError) as exc:
        raise click.ClickException(str(exc))


@main.command("eval")
@click.option("--predictions", "predictions_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--classes", "class_names_csv", type=str, default="negative,positive",
              help="Comma-separated class names mapping truth indices to prediction names.")
def cmd_eval(predictions_path, truth_path, class_names_csv):
    """Score a predictions CSV against a ground-truth labels file."""
    try:
        class_names = [c.strip() for c in class_names_csv.split(",")]
        name_to_idx = {n: i for i, n in enumerate(class_names)}
        truth = read_labels_file(truth_path)
        predicted: dict[str, int] = {}
        lines = Path(predictions_path).read_text().splitlines()
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise EvalError(f"{predictions_path}:{lineno}: expected doc_id,class_name,probability")
            doc_id, name, _prob = parts
            if name not in name_to_idx:
                raise EvalError(f"{predictions_path}:{lineno}: unknown class name {name!r}; pass --classes")
            predicted[doc_id] = name_to_idx[name]
        common = set(truth) & set(predicted)
        if not common:
            raise EvalError("predictions and truth share no doc ids")
        record = evaluate_predictions(
            {d: truth[d] for d in common},
            {d: predicted[d] for d in common},
            n_classes=len(class_names),
        )
        positive = 1 if len(class_names) == 2 else None
        click.echo(f"docs evaluated: {len(common)}")
        click.echo(f"accuracy:  {record.accuracy:.4f}")
        click.echo(f"precision: {record.primary_precision(positive):.4f}")
        click.echo(f"recall:    {record.primary_recall(positive):.4f}")
        click.echo(f"f1:        {record.primary_f1(positive):.4f}")
        click.echo(f"macro-F1:  {record.macro_f1:.4f}")
        if record.zero_division:
            click.echo("note: some precision/recall denominators were zero (reported as 0)")
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc))


@main.command("serve")
@click.option("--port", type=int, default=8000)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("--ui-dir", type=click.Path(file_okay=False), default=None)
def cmd_serve(port, host, data_dir, ui_dir):
    """Serve the labeling API (and UI, when built) until interrupted."""
    import uvicorn

    from .service import create_app

    try:
        app = create_app(data_dir, ui_dir=ui_dir)
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        actual_port = sock.getsockname()[1]
        click.echo(f"listening on http://{host}:{actual_port}", err=False)
        sys.stdout.flush()
        config = uvicorn.Config(app, log_level="warning")
        uvicorn.Server(config).run(sockets=[sock])
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc))


@main.command("synth")
@click.option("--n-docs", type=int, default=200)
@click.option("--vocab-size", type=int, default=50)
@click.option("--positive-rate", type=float, default=0.5)
@click.option("--doc-length", type=float, default=40.0)
@click.option("--boost", type=float, default=8.0)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(file_okay=False), default="synth_out")
def cmd_synth(n_docs, vocab_size, positive_rate, doc_length, boost, seed, out_dir):
    """Generate a synthetic corpus (dfm.tsv, labels.tsv, texts.tsv)."""
    try:
        data = synthetic_corpus(
            n_docs=n_docs, vocab_size=vocab_size, positive_rate=positive_rate,
            doc_length=doc_length, boost=boost, seed=seed,
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_corpus(data.corpus, out / "dfm.tsv", out / "texts.tsv")
        write_labels_file(out / "labels.tsv", data.truth.assignments())
        _write_run_json(out, "synth", {
            "n_docs": n_docs, "vocab_size": vocab_size, "positive_rate": positive_rate,
            "doc_length": doc_length, "boost": boost, "seed": seed, "out_dir": out_dir,
        })
        click.echo(f"wrote {out / 'dfm.tsv'}, labels.tsv, texts.tsv")
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc))


@main.command("make-dfm")
@click.option("--texts", "texts_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--min-token-len", type=int, default=1)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_make_dfm(texts_path, min_token_len, out_path):
    """Tokenize a texts file into a unigram-count DFM (convenience)."""
    try:
        texts = read_texts_file(texts_path)
        corpus = corpus_from_texts(texts, min_token_len=min_token_len)
        write_corpus(corpus, out_path)
        click.echo(f"wrote {out_path}: {corpus.n_docs} docs, {corpus.n_features} features")
    except _RUNTIME_ERRORS as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    main()
