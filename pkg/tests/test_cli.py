import json

import numpy as np
import pytest
from click.testing import CliRunner

from activemix import load_checkpoint, write_corpus, write_labels_file
from activemix.cli import main
from activemix.synthetic import synthetic_corpus

from oracles import map_naive_bayes


@pytest.fixture(scope="module")
def data_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    data = synthetic_corpus(n_docs=100, vocab_size=20, positive_rate=0.3, seed=8)
    write_corpus(data.corpus, root / "dfm.tsv", root / "texts.tsv")
    write_labels_file(root / "labels.tsv", data.truth.assignments())
    partial = {d: data.truth.class_of(d) for d in data.corpus.doc_ids[:30]}
    write_labels_file(root / "partial.tsv", partial)
    return root, data


@pytest.fixture
def runner():
    return CliRunner()


class TestFit:
    def test_supervised_fit_matches_closed_form(self, runner, data_files, tmp_path):
        root, data = data_files
        out = tmp_path / "out"
        result = runner.invoke(main, [
            "fit", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "partial.tsv"),
            "--lambda", "0", "--out-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        hyper, params, vocab_hash = load_checkpoint(out / "checkpoint.npz")
        # independent closed-form oracle on the same labeled subset
        from activemix import load_corpus, read_labels_file

        corpus = load_corpus(root / "dfm.tsv")
        raw = read_labels_file(root / "partial.tsv")
        row_class = [raw.get(d) for d in corpus.doc_ids]
        pi, eta = map_naive_bayes(corpus.dfm.toarray(), row_class, hyper.alpha, hyper.beta)
        assert np.max(np.abs(params.pi - pi)) < 1e-12
        assert np.max(np.abs(params.eta - eta)) < 1e-12
        assert (out / "predictions.csv").exists()
        assert (out / "run.json").exists()

    def test_missing_labels_file_exit_2(self, runner, data_files, tmp_path):
        root, _ = data_files
        result = runner.invoke(main, [
            "fit", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "nope.tsv"),
            "--out-dir", str(tmp_path / "x"),
        ])
        assert result.exit_code == 2

    def test_multi_cluster_fit(self, runner, data_files, tmp_path):
        root, _ = data_files
        out = tmp_path / "mcb"
        result = runner.invoke(main, [
            "fit", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "partial.tsv"),
            "--mode", "multi_cluster_binary", "--k", "5", "--k-star", "0",
            "--out-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        hyper, params, _ = load_checkpoint(out / "checkpoint.npz")
        assert params.log_eta.shape[1] == 5 and hyper.k_star == 0

    def test_config_file_flag_override(self, runner, data_files, tmp_path):
        root, _ = data_files
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"lam": 0.5, "seed": 9}))
        out = tmp_path / "cfgout"
        result = runner.invoke(main, [
            "fit", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "partial.tsv"),
            "--config", str(cfg), "--lambda", "0.0", "--out-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        run = json.loads((out / "run.json").read_text())
        assert run["lam"] == 0.0  # explicit flag wins
        assert run["seed"] == 9   # config fills the rest


class TestActiveSim:
    def test_budget_row_count(self, runner, data_files, tmp_path):
        root, _ = data_files
        out = tmp_path / "sim"
        result = runner.invoke(main, [
            "active-sim", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "labels.tsv"),
            "--batch-size", "10", "--stop", "budget:40", "--seed", "2",
            "--out-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 4  # header + seed batch + 3 steps
        assert (out / "checkpoint.npz").exists()

    def test_synthetic_spec(self, runner, tmp_path):
        out = tmp_path / "synt"
        result = runner.invoke(main, [
            "active-sim", "--synthetic",
            '{"n_docs": 80, "vocab_size": 15, "positive_rate": 0.4}',
            "--stop", "budget:30", "--batch-size", "10", "--seed", "4",
            "--out-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert "active-sim: 3 iterations" in result.output

    def test_reproducible_given_seed(self, runner, data_files, tmp_path):
        root, _ = data_files
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = runner.invoke(main, [
                "active-sim", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "labels.tsv"),
                "--batch-size", "10", "--stop", "budget:30", "--seed", "5",
                "--out-dir", str(out),
            ])
            assert result.exit_code == 0, result.output
            outputs.append((out / "metrics.csv").read_text())
        assert outputs[0] == outputs[1]

    def test_bad_stop_spec_usage_error(self, runner, data_files, tmp_path):
        root, _ = data_files
        result = runner.invoke(main, [
            "active-sim", "--dfm", str(root / "dfm.tsv"), "--labels", str(root / "labels.tsv"),
            "--stop", "whenever", "--out-dir", str(tmp_path / "x"),
        ])
        assert result.exit_code == 2


class TestEval:
    def test_score_predictions(self, runner, data_files, tmp_path):
        root, _ = data_files
        preds = tmp_path / "p.csv"
        from activemix.corpus import read_labels_file

        truth = read_labels_file(root / "labels.tsv")
        names = {0: "negative", 1: "positive"}
        rows = ["doc_id,class_name,probability"]
        rows += [f"{d},{names[c]},1.0" for d, c in truth.items()]
        preds.write_text("\n".join(rows) + "\n")
        result = runner.invoke(main, [
            "eval", "--predictions", str(preds), "--truth", str(root / "labels.tsv"),
        ])
        assert result.exit_code == 0, result.output
        assert "accuracy:  1.0000" in result.output

    def test_disjoint_ids_error(self, runner, data_files, tmp_path):
        root, _ = data_files
        preds = tmp_path / "p.csv"
        preds.write_text("doc_id,class_name,probability\nghost,negative,1.0\n")
        result = runner.invoke(main, [
            "eval", "--predictions", str(preds), "--truth", str(root / "labels.tsv"),
        ])
        assert result.exit_code == 1
        assert "share no doc ids" in result.output


class TestSynthCommand:
    def test_writes_loadable_corpus(self, runner, tmp_path):
        out = tmp_path / "synth"
        result = runner.invoke(main, [
            "synth", "--n-docs", "30", "--vocab-size", "10", "--seed", "3",
            "--out-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        from activemix import load_corpus
        from activemix.corpus import read_labels_file

        corpus = load_corpus(out / "dfm.tsv", out / "texts.tsv")
        labels = read_labels_file(out / "labels.tsv")
        assert corpus.n_docs == 30 and len(labels) == 30


class TestServe:
    def test_port_zero_prints_assigned_port(self, tmp_path):
        import re
        import subprocess
        import sys
        import time
        import urllib.request

        proc = subprocess.Popen(
            [sys.executable, "-m", "activemix.cli", "serve", "--port", "0",
             "--data-dir", str(tmp_path / "srv")],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True,
        )
        try:
            line = proc.stdout.readline()
            match = re.search(r"listening on http://127\.0\.0\.1:(\d+)", line)
            assert match, line
            port = int(match.group(1))
            assert port > 0
            deadline = time.time() + 10
            body = None
            while time.time() < deadline:
                try:
                    with urllib.request.urlopen(f"http://127.0.0.1:{port}/v1/health", timeout=1) as resp:
                        body = resp.read()
                    break
                except OSError:
                    time.sleep(0.1)
            assert body and b"ok" in body
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestMakeDfm:
    def test_tokenize(self, runner, tmp_path):
        texts = tmp_path / "texts.tsv"
        texts.write_text("d1\tthe cat sat\nd2\tthe dog\n")
        out = tmp_path / "dfm.tsv"
        result = runner.invoke(main, [
            "make-dfm", "--texts", str(texts), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        from activemix import load_corpus

        corpus = load_corpus(out)
        assert corpus.n_docs == 2
        assert "cat" in corpus.vocabulary.index
