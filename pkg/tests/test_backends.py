from __future__ import annotations

import json
import threading

import httpx
import numpy as np
import pytest

from avmemory.backends import (
    UNMATCHED_COMPLETION,
    BackendSuite,
    HttpEmbedder,
    HttpReasoner,
    HttpTranscriber,
    Scenario,
    StubDescriber,
    StubEmbedder,
    StubReasoner,
    StubTranscriber,
    http_suite,
    make_stub_server,
    stub_suite,
)
from avmemory.consolidation import cosine
from avmemory.errors import BackendError, BackendUnavailable, DimensionMismatch, PreconditionError, Timeout
from avmemory.segmentation import TimeInterval


def test_stub_embed_deterministic_and_distinct():
    e = StubEmbedder(dim=64)
    a1 = e.embed("image", b"pixels")
    a2 = StubEmbedder(dim=64).embed("image", b"pixels")
    assert a1.dtype == np.float32 and a1.shape == (64,)
    assert a1.tobytes() == a2.tobytes()
    assert cosine(a1, e.embed("image", b"pixels!")) < 1.0
    assert cosine(a1, e.embed("audio", b"pixels")) < 1.0
    assert np.all(np.abs(a1) <= 1.0)


def test_stub_embed_scenario_concepts_and_literal_vectors():
    sc = Scenario(embeddings={"a.pgm": {"seed": "dog"}, "dog text": {"seed": "dog"}, "lit": [1, 0, 0, 0]})
    e = StubEmbedder(sc, dim=4)
    assert e.embed("image", b"x", "a.pgm").tobytes() == e.embed("text", b"y", "dog text").tobytes()
    np.testing.assert_array_equal(e.embed("text", b"z", "lit"), [1, 0, 0, 0])
    with pytest.raises(DimensionMismatch):
        StubEmbedder(Scenario(embeddings={"k": [1.0, 2.0]}), dim=4).embed("text", b"k", "k")


def test_stub_embed_preconditions():
    e = StubEmbedder(dim=4)
    with pytest.raises(PreconditionError):
        e.embed("image", b"")
    with pytest.raises(PreconditionError):
        e.embed("smell", b"x")


def test_stub_transcriber():
    sc = Scenario(transcripts=[{"start": 0, "end": 5, "text": "hello world"}],
                  transcript_default=[{"start": 0, "end": 2, "text": "filler"}])
    t = StubTranscriber(sc)
    loud = np.full(16000 * 10, 0.3)
    assert [(s.interval.to_list(), s.text) for s in t.transcribe(loud, 0.0)] == [([0, 5], "hello world")]
    assert [(s.interval.to_list(), s.text) for s in t.transcribe(loud, 10.0)] == [([10, 12], "filler")]
    assert t.transcribe(np.zeros(16000), 0.0) == []
    assert t.count == 3


def test_stub_describer():
    d = StubDescriber(Scenario(captions={"frames/00001.pgm": "a red car"}))
    assert d.describe(b"img", "frames/00001.pgm") == "a red car"
    placeholder = d.describe(b"img", "frames/00002.pgm")
    assert placeholder.startswith("frame:") and len(placeholder) == len("frame:") + 12
    assert placeholder == d.describe(b"img")
    assert d.calls == ["frames/00001.pgm", "frames/00002.pgm", None]


def test_stub_reasoner():
    r = StubReasoner(Scenario(completions=[{"pattern": "CONFIDENCE", "response": "ANSWER: B\nCONFIDENCE: 0.9"}]))
    assert r.complete("give ANSWER and CONFIDENCE") == "ANSWER: B\nCONFIDENCE: 0.9"
    assert r.complete("something else") == UNMATCHED_COMPLETION == "ANSWER: NONE\nCONFIDENCE: 0.0"
    with pytest.raises(PreconditionError):
        r.complete("   ")


def test_suite_requires_all_roles():
    with pytest.raises(PreconditionError):
        BackendSuite(StubEmbedder(dim=4), None, StubDescriber(), StubReasoner())
    s = stub_suite(dim=4)
    assert s.confidence is s.reasoner and s.dim == 4


def test_scenario_load(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"captions": {"a": "b"}, "unrelated": 1}))
    assert Scenario.load(path).captions == {"a": "b"}


# --------------------------------------------------------------------------- HTTP client

def mock(handler):
    return httpx.MockTransport(handler)


def test_http_embed_dimension_mismatch():
    transport = mock(lambda req: httpx.Response(200, json={"embedding": [0.1] * 512}))
    e = HttpEmbedder("http://model", dim=1024, transport=transport)
    with pytest.raises(DimensionMismatch):
        e.embed("image", b"x")


def test_http_embed_request_shape():
    seen = {}

    def handler(req):
        seen["path"] = req.url.path
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json={"embedding": [0.5, -0.5, 0.25]})

    vec = HttpEmbedder("http://model/", dim=3, transport=mock(handler)).embed("audio", b"\x00\x01")
    assert seen == {"path": "/embed", "body": {"modality": "audio", "data_b64": "AAE="}}
    np.testing.assert_array_equal(vec, np.array([0.5, -0.5, 0.25], dtype=np.float32))


def test_http_timeout_respects_retry_count():
    calls = []

    def handler(req):
        calls.append(1)
        raise httpx.ReadTimeout("slow", request=req)

    r = HttpReasoner("http://model", timeout_s=0.5, retries=2, transport=mock(handler))
    with pytest.raises(Timeout) as info:
        r.complete("hi")
    assert len(calls) == 3
    assert info.value.role == "reasoner"


def test_http_unavailable_and_client_errors():
    calls = []

    def down(req):
        calls.append(1)
        return httpx.Response(503)

    with pytest.raises(BackendUnavailable):
        HttpReasoner("http://m", retries=0, transport=mock(down)).complete("x")
    assert len(calls) == 1

    with pytest.raises(BackendError):
        HttpReasoner("http://m", transport=mock(lambda r: httpx.Response(400))).complete("x")
    with pytest.raises(BackendError):
        HttpReasoner("http://m", transport=mock(lambda r: httpx.Response(200, content=b"nope"))).complete("x")
    with pytest.raises(BackendError):
        HttpReasoner("http://m", transport=mock(lambda r: httpx.Response(200, json={}))).complete("x")


def test_http_retry_then_success():
    calls = []

    def flaky(req):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("refused", request=req)
        return httpx.Response(200, json={"text": "ok"})

    assert HttpReasoner("http://m", retries=1, transport=mock(flaky)).complete("x") == "ok"
    assert len(calls) == 2


def test_http_transcriber_applies_offset():
    transport = mock(lambda r: httpx.Response(200, json={"segments": [{"start": 0, "end": 2, "text": "hi"}]}))
    segs = HttpTranscriber("http://m", transport=transport).transcribe(np.full(16000, 0.1), 10.0)
    assert segs[0].interval == TimeInterval(10, 12) and segs[0].text == "hi"


def test_http_suite_endpoint_resolution():
    s = http_suite({"default": "http://a", "complete": "http://b", "confidence": "http://c"}, dim=8)
    assert s.embedder.base_url == "http://a" and s.reasoner.base_url == "http://b"
    assert s.confidence.base_url == "http://c"
    with pytest.raises(PreconditionError):
        http_suite({"embed": "http://a"})


# --------------------------------------------------------------------------- stub server round trip

@pytest.fixture()
def server():
    sc = Scenario(transcripts=[{"start": 0, "end": 1, "text": "hey"}],
                  completions=[{"pattern": "ping", "response": "pong"}])
    srv = make_stub_server(stub_suite(sc, dim=16))
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def test_stub_server_speaks_wire_protocol(server):
    remote = http_suite({"default": server}, dim=16, timeout_s=5)
    local = stub_suite(dim=16)
    v = remote.embedder.embed("image", b"abc")
    assert v.tobytes() == local.embedder.embed("image", b"abc").tobytes()
    assert remote.reasoner.complete("ping?") == "pong"
    assert remote.reasoner.complete("other") == UNMATCHED_COMPLETION
    assert remote.describer.describe(b"img") == local.describer.describe(b"img")
    segs = remote.transcriber.transcribe(np.full(16000, 0.25), 4.0)
    assert [(s.interval.to_list(), s.text) for s in segs] == [([4.0, 5.0], "hey")]
    assert remote.transcriber.transcribe(np.zeros(1600), 0.0) == []


def test_stub_server_rejects_bad_requests(server):
    assert httpx.post(server + "/nope", json={}).status_code == 404
    assert httpx.post(server + "/complete", json={"prompt": ""}).status_code == 400
    with pytest.raises(DimensionMismatch):
        http_suite({"default": server}, dim=8).embedder.embed("image", b"abc")  # server dim is 16
