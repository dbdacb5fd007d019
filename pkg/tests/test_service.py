import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from activemix import write_corpus, write_labels_file
from activemix.model import load_checkpoint
from activemix.service import create_app, replay_session
from activemix.synthetic import synthetic_corpus


@pytest.fixture(scope="module")
def corpus_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    data = synthetic_corpus(n_docs=120, vocab_size=25, positive_rate=0.3, seed=6)
    write_corpus(data.corpus, root / "dfm.tsv", root / "texts.tsv")
    write_labels_file(root / "labels.tsv", data.truth.assignments())
    return root


@pytest.fixture
def client(tmp_path, corpus_files):
    app = create_app(tmp_path / "data", ui_dir=None)
    with TestClient(app) as c:
        c.data_dir = tmp_path / "data"
        c.corpus_files = corpus_files
        yield c


def register_corpus(client, truth=True):
    payload = {
        "dfm_path": str(client.corpus_files / "dfm.tsv"),
        "texts_path": str(client.corpus_files / "texts.tsv"),
    }
    if truth:
        payload["truth_path"] = str(client.corpus_files / "labels.tsv")
    resp = client.post("/v1/corpora", json=payload)
    assert resp.status_code == 201, resp.text
    return resp.json()["corpus_id"]


def create_session(client, corpus_id, **overrides):
    config = {
        "mode": "binary",
        "lambda": 0.001,
        "batch_size": 5,
        "strategy": "uncertainty",
        "seed": 3,
        "test_fraction": 0.2,
        "stop": {"kind": "fixed_budget", "budget": 20},
    }
    config.update(overrides)
    resp = client.post("/v1/sessions", json={"corpus_id": corpus_id, "config": config})
    assert resp.status_code == 201, resp.text
    return resp.json()


def wait_status(client, session_id, targets=("awaiting_labels", "awaiting_keywords", "stopped"), timeout=20.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/v1/sessions/{session_id}").json()
        if record["status"] in targets:
            return record
        time.sleep(0.02)
    raise TimeoutError(f"session stuck: {record}")


def truth_lookup(client):
    from activemix.corpus import read_labels_file

    return read_labels_file(client.corpus_files / "labels.tsv")


def label_full_batch(client, session_id, truth):
    queries = client.get(f"/v1/sessions/{session_id}/queries").json()["queries"]
    labels = [{"doc_id": q["doc_id"], "class_index": truth[q["doc_id"]]} for q in queries]
    resp = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels})
    assert resp.status_code == 200, resp.text
    return queries


class TestCorpora:
    def test_idempotent_registration(self, client):
        a = register_corpus(client)
        b = register_corpus(client)
        assert a == b

    def test_missing_file(self, client):
        resp = client.post("/v1/corpora", json={"dfm_path": "/nope/missing.tsv"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_corpus"


class TestSessionLifecycle:
    def test_create_and_seed_queries(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        assert record["status"] == "awaiting_labels"
        assert record["pending_queries"] == 5
        queries = client.get(f"/v1/sessions/{record['session_id']}/queries").json()["queries"]
        assert len(queries) == 5
        assert all(q["raw_text"] is not None for q in queries)
        # seed queries carry no model context yet
        assert all(q["class_probabilities"] is None for q in queries)

    def test_lambda_validation(self, client):
        corpus_id = register_corpus(client)
        resp = client.post(
            "/v1/sessions",
            json={"corpus_id": corpus_id, "config": {"lambda": 1.5}},
        )
        assert resp.status_code == 400
        body = resp.json()
        assert body["field"] == "lambda" and "lambda" in body["message"]

    def test_unknown_session_not_found(self, client):
        assert client.get("/v1/sessions/ghost").status_code == 404

    def test_full_loop_until_stop(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        sid = record["session_id"]
        truth = truth_lookup(client)
        while True:
            record = wait_status(client, sid)
            if record["status"] == "stopped":
                break
            label_full_batch(client, sid, truth)
        metrics = client.get(f"/v1/sessions/{sid}/metrics").json()["history"]
        assert [m["n_labeled"] for m in metrics] == [5, 10, 15, 20]
        assert all("f1" in m for m in metrics)
        preds = client.get(f"/v1/sessions/{sid}/predictions")
        assert preds.status_code == 200
        lines = preds.text.strip().split("\n")
        assert lines[0] == "doc_id,class_name,probability"
        assert len(lines) == 121

    def test_partial_submission_keeps_status(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        sid = record["session_id"]
        truth = truth_lookup(client)
        queries = client.get(f"/v1/sessions/{sid}/queries").json()["queries"]
        first = queries[0]["doc_id"]
        resp = client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": first, "class_index": truth[first]}]},
        )
        body = resp.json()
        assert body["status"] == "awaiting_labels"
        assert body["pending_queries"] == 4
        # re-reads are stable and shrink to the pending remainder
        again = client.get(f"/v1/sessions/{sid}/queries").json()["queries"]
        assert [q["doc_id"] for q in again] == [q["doc_id"] for q in queries[1:]]

    def test_label_rejections(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        sid = record["session_id"]
        truth = truth_lookup(client)
        queries = client.get(f"/v1/sessions/{sid}/queries").json()["queries"]
        ids = [q["doc_id"] for q in queries]
        outsider = next(d for d in truth if d not in ids)
        resp = client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": outsider, "class_index": 0}]},
        )
        assert resp.status_code == 409 and resp.json()["code"] == "not_in_batch"
        resp = client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": "ghost", "class_index": 0}]},
        )
        assert resp.status_code == 404
        resp = client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": ids[0], "class_index": 7}]},
        )
        assert resp.status_code == 400
        # label one properly, then attempt to relabel
        client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": ids[0], "class_index": truth[ids[0]]}]},
        )
        resp = client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": ids[0], "class_index": truth[ids[0]]}]},
        )
        assert resp.status_code == 409 and resp.json()["code"] == "already_labeled"

    def test_idempotent_submission_id(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        sid = record["session_id"]
        truth = truth_lookup(client)
        queries = client.get(f"/v1/sessions/{sid}/queries").json()["queries"]
        doc = queries[0]["doc_id"]
        body = {
            "labels": [{"doc_id": doc, "class_index": truth[doc]}],
            "submission_id": "abc-1",
        }
        assert client.post(f"/v1/sessions/{sid}/labels", json=body).status_code == 200
        # a retry of the same submission is acknowledged, not double-applied
        resp = client.post(f"/v1/sessions/{sid}/labels", json=body)
        assert resp.status_code == 200
        assert resp.json()["pending_queries"] == 4

    def test_stop_endpoint_and_terminal_state(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        sid = record["session_id"]
        truth = truth_lookup(client)
        label_full_batch(client, sid, truth)
        record = wait_status(client, sid)
        assert client.post(f"/v1/sessions/{sid}/stop").json()["status"] == "stopped"
        # no transitions out of stopped
        assert client.get(f"/v1/sessions/{sid}/queries").status_code == 409
        resp = client.post(
            f"/v1/sessions/{sid}/labels",
            json={"labels": [{"doc_id": "doc000", "class_index": 0}]},
        )
        assert resp.status_code == 409
        # predictions remain exportable
        assert client.get(f"/v1/sessions/{sid}/predictions").status_code == 200

    def test_queries_conflict_while_stopped(self, client):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id)
        sid = record["session_id"]
        client.post(f"/v1/sessions/{sid}/stop")
        resp = client.get(f"/v1/sessions/{sid}/queries")
        assert resp.status_code == 409
        assert "stopped" in resp.json()["message"]


class TestKeywordFlow:
    def test_roundtrip(self, client):
        corpus_id = register_corpus(client)
        record = create_session(
            client, corpus_id,
            keywords={"enabled": True, "gamma": 5.0, "m": 4},
            stop={"kind": "fixed_budget", "budget": 25},
        )
        sid = record["session_id"]
        truth = truth_lookup(client)
        # seed batch: no model yet, so no keyword stage
        label_full_batch(client, sid, truth)
        record = wait_status(client, sid)
        assert record["status"] == "awaiting_labels"
        # second batch completes into the keyword stage
        label_full_batch(client, sid, truth)
        record = wait_status(client, sid)
        assert record["status"] == "awaiting_keywords"
        cands = client.get(f"/v1/sessions/{sid}/keywords").json()["candidates"]
        assert {c["class_name"] for c in cands} <= {"negative", "positive"}
        terms = [t for c in cands for t in c["terms"]]
        assert terms
        decisions = [
            {"term": terms[0], "class_index": cands[0]["class_index"], "accept": True}
        ]
        resp = client.post(f"/v1/sessions/{sid}/keywords", json={"decisions": decisions})
        assert resp.status_code == 200
        record = wait_status(client, sid)
        assert record["status"] in ("awaiting_labels", "stopped")
        # conflicting re-decision is rejected at the next keyword stage
        label_full_batch(client, sid, truth)
        record = wait_status(client, sid)
        if record["status"] == "awaiting_keywords":
            resp = client.post(
                f"/v1/sessions/{sid}/keywords",
                json={"decisions": [{"term": terms[0], "class_index": 0, "accept": False}]},
            )
            assert resp.status_code == 409

    def test_skip_all_proceeds(self, client):
        corpus_id = register_corpus(client)
        record = create_session(
            client, corpus_id,
            keywords={"enabled": True},
            stop={"kind": "fixed_budget", "budget": 25},
        )
        sid = record["session_id"]
        truth = truth_lookup(client)
        label_full_batch(client, sid, truth)
        wait_status(client, sid)
        label_full_batch(client, sid, truth)
        record = wait_status(client, sid)
        assert record["status"] == "awaiting_keywords"
        resp = client.post(f"/v1/sessions/{sid}/keywords", json={"decisions": []})
        assert resp.status_code == 200
        record = wait_status(client, sid)
        assert record["status"] in ("awaiting_labels", "stopped")


class TestReplay:
    def drive_session(self, client, **overrides):
        corpus_id = register_corpus(client)
        record = create_session(client, corpus_id, **overrides)
        sid = record["session_id"]
        truth = truth_lookup(client)
        while True:
            record = wait_status(client, sid)
            if record["status"] == "stopped":
                break
            if record["status"] == "awaiting_keywords":
                cands = client.get(f"/v1/sessions/{sid}/keywords").json()["candidates"]
                decisions = [
                    {"term": c["terms"][0], "class_index": c["class_index"], "accept": True}
                    for c in cands
                    if c["terms"]
                ]
                client.post(f"/v1/sessions/{sid}/keywords", json={"decisions": decisions})
                continue
            label_full_batch(client, sid, truth)
        return sid

    def test_event_log_replay_bit_for_bit(self, client):
        sid = self.drive_session(client)
        session_dir = client.data_dir / "sessions" / sid
        hyper, params, vocab_hash = load_checkpoint(session_dir / "checkpoint.npz")
        from activemix import load_corpus

        corpus = load_corpus(client.corpus_files / "dfm.tsv", client.corpus_files / "texts.tsv")
        runtime = replay_session(session_dir, corpus)
        assert runtime.status == "stopped"
        assert np.array_equal(runtime.session.params.log_pi, params.log_pi)
        assert np.array_equal(runtime.session.params.log_eta, params.log_eta)
        assert vocab_hash == corpus.vocabulary.content_hash()

    def test_replay_with_keywords(self, client):
        sid = self.drive_session(
            client,
            keywords={"enabled": True, "m": 3},
            stop={"kind": "fixed_budget", "budget": 25},
        )
        session_dir = client.data_dir / "sessions" / sid
        _, params, _ = load_checkpoint(session_dir / "checkpoint.npz")
        from activemix import load_corpus

        corpus = load_corpus(client.corpus_files / "dfm.tsv", client.corpus_files / "texts.tsv")
        runtime = replay_session(session_dir, corpus)
        assert np.array_equal(runtime.session.params.log_eta, params.log_eta)
        assert runtime.session.ledger.n_decided > 0

    def test_restart_recovers_session(self, client):
        sid = self.drive_session(client)
        before = client.get(f"/v1/sessions/{sid}/predictions").text
        app2 = create_app(client.data_dir, ui_dir=None)
        with TestClient(app2) as fresh:
            record = fresh.get(f"/v1/sessions/{sid}")
            assert record.status_code == 200
            assert record.json()["status"] == "stopped"
            after = fresh.get(f"/v1/sessions/{sid}/predictions").text
        assert after == before


class TestHealth:
    def test_health(self, client):
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"
