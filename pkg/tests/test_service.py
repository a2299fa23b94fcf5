"""HTTP service: completion, acceptance logging, reload under load."""

import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from xfercomplete import corpus as C
from xfercomplete import tokenizer as T
from xfercomplete.corpus import Dataset, read_events_jsonl
from xfercomplete.model import ModelCheckpoint, ModelConfig, TransformerLM, save_checkpoint
from xfercomplete.service import CompletionService, create_app


@pytest.fixture(scope="module")
def checkpoint_path(tmp_path_factory, curly_ide, curly_commit, curly_vocab):
    cfg = ModelConfig(vocab_size=len(curly_vocab), context_len=64, d_model=16,
                      n_heads=2, n_layers=1, d_ff=32, seed=2)
    lm = TransformerLM(cfg)
    ckpt = ModelCheckpoint(cfg, lm.params,
                           provenance=[{"phase": "pretrain", "role": "ide",
                                        "epochs": 1, "learning_rate": 5e-4}],
                           meta={"multilingual": False,
                                 "vocab": curly_vocab.dump(),
                                 "vocab_fingerprint": curly_vocab.fingerprint()})
    path = tmp_path_factory.mktemp("ckpt") / "model.ckpt"
    save_checkpoint(ckpt, path)
    return path


@pytest.fixture()
def service(checkpoint_path, tmp_path):
    return CompletionService(checkpoint_path, tmp_path / "events.jsonl")


@pytest.fixture()
def client(service):
    return TestClient(create_app(service))


def test_health(client):
    r = client.get("/v1/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["model"]["provenance"]
    assert body["kernel_backend"] in ("cython", "numpy")


def test_complete_with_explicit_candidates(client):
    r = client.post("/v1/complete", json={
        "language": "curly",
        "before_cursor": "let x = self.fooBar(",
        "candidates": ["fooBar", "fooBaz"],
    })
    assert r.status_code == 200
    body = r.json()
    assert {s["token"] for s in body["suggestions"]} == {"fooBar", "fooBaz"}
    assert body["suggestions"][0]["rank"] == 1
    assert body["latency_ms"] > 0
    assert body["request_id"]


def test_complete_deterministic_for_identical_requests(client):
    req = {"language": "curly", "before_cursor": "cache.loadIndex(key",
           "candidates": ["alpha", "beta", "gamma"]}
    a = client.post("/v1/complete", json=req).json()
    b = client.post("/v1/complete", json=req).json()
    assert [s["token"] for s in a["suggestions"]] == \
           [s["token"] for s in b["suggestions"]]
    assert [s["score"] for s in a["suggestions"]] == \
           [s["score"] for s in b["suggestions"]]


def test_complete_derives_candidates_when_absent(client):
    r = client.post("/v1/complete", json={
        "language": "curly",
        "before_cursor": "let total = rowCount + cache.fetch(",
    })
    assert r.status_code == 200
    assert len(r.json()["suggestions"]) > 0


def test_empty_before_cursor_client_error(client):
    r = client.post("/v1/complete", json={"language": "curly",
                                          "before_cursor": "   "})
    assert r.status_code == 400


def test_unknown_language_client_error(client):
    r = client.post("/v1/complete", json={"language": "perl",
                                          "before_cursor": "x = 1"})
    assert r.status_code == 400


def test_accept_logs_valid_event(client, service):
    r = client.post("/v1/complete", json={
        "language": "curly",
        "before_cursor": "store.put(key, value); let z = ",
        "candidates": ["alpha", "beta"],
        "developer_id": "dev-7",
    })
    body = r.json()
    token = body["suggestions"][0]["token"]
    r2 = client.post("/v1/accept", json={"request_id": body["request_id"],
                                         "accepted": token})
    assert r2.status_code == 200
    assert r2.json()["logged"] is True
    events = read_events_jsonl(service.log.path)
    assert len(events) == 1
    ev = events[0]
    assert ev.accepted == token
    assert ev.developer_id == "dev-7"
    assert set(ev.candidates) == {"alpha", "beta"}
    assert ev.accepted in ev.candidates


def test_accept_not_shown_rejected(client, service):
    r = client.post("/v1/complete", json={
        "language": "curly", "before_cursor": "a.b(",
        "candidates": ["alpha", "beta"]})
    rid = r.json()["request_id"]
    r2 = client.post("/v1/accept", json={"request_id": rid,
                                         "accepted": "notShown"})
    assert r2.status_code == 400
    assert not service.log.path.exists() or \
        read_events_jsonl(service.log.path) == []
    # the session survives a bad accept; a correct one still lands
    token = r.json()["suggestions"][0]["token"]
    assert client.post("/v1/accept", json={"request_id": rid,
                                           "accepted": token}).status_code == 200


def test_accept_unknown_request_id(client):
    r = client.post("/v1/accept", json={"request_id": "req-nope",
                                        "accepted": "x"})
    assert r.status_code == 404


def test_accept_is_idempotent_per_request(client, service):
    r = client.post("/v1/complete", json={
        "language": "curly", "before_cursor": "m.n(",
        "candidates": ["alpha", "beta"]})
    rid = r.json()["request_id"]
    token = r.json()["suggestions"][0]["token"]
    assert client.post("/v1/accept", json={"request_id": rid,
                                           "accepted": token}).status_code == 200
    # second accept of the same request: session is gone
    assert client.post("/v1/accept", json={"request_id": rid,
                                           "accepted": token}).status_code == 404
    assert len(read_events_jsonl(service.log.path)) == 1


def test_log_lines_are_complete_json(client, service):
    for i in range(5):
        r = client.post("/v1/complete", json={
            "language": "curly", "before_cursor": f"obj{i}.call(",
            "candidates": ["alpha", "beta"]})
        client.post("/v1/accept", json={"request_id": r.json()["request_id"],
                                        "accepted": r.json()["suggestions"][0]["token"]})
    raw = service.log.path.read_bytes().decode("utf-8")
    assert raw.endswith("\n")
    lines = raw.splitlines()
    assert len(lines) == 5
    for line in lines:
        json.loads(line)


def test_reload_with_corrupt_file_keeps_old_model(client, service, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    old = service.snapshot
    r = client.post("/v1/reload", json={"checkpoint_path": str(bad)})
    assert r.status_code == 400
    assert service.snapshot is old
    # still serving
    assert client.get("/v1/health").status_code == 200


def test_reload_same_checkpoint_semantics(client, service, checkpoint_path):
    req = {"language": "curly", "before_cursor": "q.w(",
           "candidates": ["alpha", "beta"]}
    before = client.post("/v1/complete", json=req).json()["suggestions"]
    r = client.post("/v1/reload", json={"checkpoint_path": str(checkpoint_path)})
    assert r.status_code == 200
    after = client.post("/v1/complete", json=req).json()["suggestions"]
    assert before == after


def test_swap_under_concurrent_load_loses_no_requests(client, service,
                                                      checkpoint_path):
    errors = []
    done = threading.Event()

    def hammer():
        while not done.is_set():
            r = client.post("/v1/complete", json={
                "language": "curly", "before_cursor": "a.b(c, d); e.f(",
                "candidates": ["alpha", "beta", "gamma"]})
            if r.status_code != 200:
                errors.append(r.status_code)

    threads = [threading.Thread(target=hammer) for _ in range(4)]
    for t in threads:
        t.start()
    for _ in range(5):
        r = client.post("/v1/reload", json={"checkpoint_path": str(checkpoint_path)})
        assert r.status_code == 200
    done.set()
    for t in threads:
        t.join()
    assert errors == []
