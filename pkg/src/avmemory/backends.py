"""Model backends: cross-modal embedder, transcriber, frame describer, text reasoner.

Two families implement the same four roles:

* ``Stub*`` classes are deterministic test doubles driven by a *scenario*
  (a JSON document, see :class:`Scenario`).
* ``Http*`` classes speak the HTTP+JSON wire protocol::

      POST /embed      {modality, data_b64 | uri}              -> {embedding: [...]}
      POST /transcribe {audio_b64}                             -> {segments: [{start, end, text}]}
      POST /describe   {image_b64, max_tokens}                 -> {text}
      POST /complete   {prompt, temperature, max_tokens}       -> {text}

  Transcript times returned by a server are relative to the submitted audio;
  the client shifts them by the caller's base offset.

:func:`serve_stub` exposes a stub suite over that protocol.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol

import httpx
import numpy as np

from .errors import BackendError, BackendUnavailable, DimensionMismatch, PreconditionError, Timeout
from .media import SAMPLE_RATE_HZ, parse_wav, wav_bytes
from .segmentation import TimeInterval

logger = logging.getLogger(__name__)

MODALITIES = ("image", "audio", "text")
UNMATCHED_COMPLETION = "ANSWER: NONE\nCONFIDENCE: 0.0"
DEFAULT_DIM = 1024


@dataclass(frozen=True)
class TranscriptSegment:
    interval: TimeInterval
    text: str

    def to_dict(self) -> Dict[str, Any]:
        return {"start": self.interval.start_s, "end": self.interval.end_s, "text": self.text}


class Embedder(Protocol):
    dim: int

    def embed(self, modality: str, payload: bytes, key: Optional[str] = None) -> np.ndarray: ...


class Transcriber(Protocol):
    def transcribe(self, samples: np.ndarray, offset_s: float = 0.0) -> List[TranscriptSegment]: ...


class Describer(Protocol):
    def describe(self, image: bytes, key: Optional[str] = None, max_tokens: int = 200) -> str: ...


class Reasoner(Protocol):
    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 300) -> str: ...


@dataclass
class BackendSuite:
    """The four model roles. ``confidence`` is the reasoner used to score fast
    answers; it defaults to ``reasoner``."""

    embedder: Embedder
    transcriber: Transcriber
    describer: Describer
    reasoner: Reasoner
    confidence: Optional[Reasoner] = None

    def __post_init__(self):
        if None in (self.embedder, self.transcriber, self.describer, self.reasoner):
            raise PreconditionError("all four backend roles must be populated")
        if self.confidence is None:
            self.confidence = self.reasoner

    @property
    def dim(self) -> int:
        return self.embedder.dim


def check_embedding(values, dim: int) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float32)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionMismatch(f"embedding has shape {vec.shape}, expected ({dim},)")
    if not np.all(np.isfinite(vec)):
        raise BackendError("embedding contains non-finite values", role="embedder")
    return vec


def content_hash64(*parts: bytes) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(8, "little"))
        h.update(p)
    return int.from_bytes(h.digest()[:8], "little")


def seeded_vector(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, dim).astype(np.float32)


def is_silent(samples) -> bool:
    return not np.any(np.asarray(samples))


# --------------------------------------------------------------------------- stubs

@dataclass
class Scenario:
    """Scripted behaviour for the stub backends.

    JSON shape (every key optional)::

        {
          "embeddings":  {"<key>": [floats] | {"seed": "<concept>"}},
          "transcripts": [{"start": 0, "end": 5, "text": "..."}],     # stream time
          "transcript_default": [{"start": 0, "end": 2, "text": "..."}],  # per-slice, relative
          "captions":    {"<frame path>": "..."},
          "completions": [{"pattern": "<regex>", "response": "..."}]
        }

    Embedding keys are the frame path, the audio content ref or the raw text.
    Two keys sharing a ``seed`` concept receive the same vector.
    """

    embeddings: Dict[str, Any] = field(default_factory=dict)
    transcripts: List[Dict[str, Any]] = field(default_factory=list)
    transcript_default: List[Dict[str, Any]] = field(default_factory=list)
    captions: Dict[str, str] = field(default_factory=dict)
    completions: List[Dict[str, str]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        known = {k: data[k] for k in ("embeddings", "transcripts", "transcript_default", "captions", "completions") if k in data}
        return cls(**known)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _CallLog:
    def __init__(self):
        self._lock = threading.Lock()
        self.calls: List[Any] = []

    def record(self, item):
        with self._lock:
            self.calls.append(item)

    @property
    def count(self) -> int:
        return len(self.calls)


class StubEmbedder(_CallLog):
    def __init__(self, scenario: Optional[Scenario] = None, dim: int = DEFAULT_DIM):
        super().__init__()
        self.scenario = scenario or Scenario()
        self.dim = dim

    def embed(self, modality: str, payload: bytes, key: Optional[str] = None) -> np.ndarray:
        if modality not in MODALITIES:
            raise PreconditionError(f"unknown modality {modality!r}")
        if not payload:
            raise PreconditionError("empty embedding payload")
        self.record((modality, key))
        if key is not None and key in self.scenario.embeddings:
            entry = self.scenario.embeddings[key]
            if isinstance(entry, dict):
                return seeded_vector(content_hash64(b"concept", str(entry["seed"]).encode()), self.dim)
            return check_embedding(entry, self.dim)
        return seeded_vector(content_hash64(modality.encode(), payload), self.dim)


class StubTranscriber(_CallLog):
    def __init__(self, scenario: Optional[Scenario] = None):
        super().__init__()
        self.scenario = scenario or Scenario()

    def transcribe(self, samples: np.ndarray, offset_s: float = 0.0) -> List[TranscriptSegment]:
        samples = np.asarray(samples)
        self.record((offset_s, len(samples)))
        if is_silent(samples):
            return []
        end_s = offset_s + len(samples) / SAMPLE_RATE_HZ
        out = []
        for item in self.scenario.transcripts:
            # a scripted line belongs to the slice holding its start time
            if offset_s <= item["start"] < end_s:
                out.append(TranscriptSegment(TimeInterval(item["start"], item["end"]), item["text"]))
        if not out:
            for item in self.scenario.transcript_default:
                out.append(TranscriptSegment(
                    TimeInterval(offset_s + item["start"], offset_s + item["end"]), item["text"]))
        return sorted(out, key=lambda s: s.interval)


class StubDescriber(_CallLog):
    def __init__(self, scenario: Optional[Scenario] = None):
        super().__init__()
        self.scenario = scenario or Scenario()

    def describe(self, image: bytes, key: Optional[str] = None, max_tokens: int = 200) -> str:
        if not image:
            raise PreconditionError("empty image payload")
        self.record(key)
        if key is not None and key in self.scenario.captions:
            return self.scenario.captions[key]
        return "frame:" + hashlib.sha256(image).hexdigest()[:12]


class StubReasoner(_CallLog):
    def __init__(self, scenario: Optional[Scenario] = None):
        super().__init__()
        self.scenario = scenario or Scenario()
        self._patterns = [(re.compile(c["pattern"], re.DOTALL), c["response"]) for c in self.scenario.completions]

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 300) -> str:
        if not prompt or not prompt.strip():
            raise PreconditionError("empty prompt")
        self.record(prompt)
        for pattern, response in self._patterns:
            if pattern.search(prompt):
                return response
        return UNMATCHED_COMPLETION


def stub_suite(scenario: Optional[Scenario] = None, dim: int = DEFAULT_DIM) -> BackendSuite:
    scenario = scenario or Scenario()
    return BackendSuite(
        embedder=StubEmbedder(scenario, dim),
        transcriber=StubTranscriber(scenario),
        describer=StubDescriber(scenario),
        reasoner=StubReasoner(scenario),
    )


# --------------------------------------------------------------------------- HTTP

class _HttpRole:
    role = "backend"

    def __init__(self, base_url: str, timeout_s: float = 60.0, retries: int = 1,
                 transport: Optional[httpx.BaseTransport] = None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _post(self, route: str, body: Dict[str, Any]) -> Dict[str, Any]:
        url = f"{self.base_url}/{route}"
        attempts = 1 + max(0, self.retries)
        last: Optional[BackendError] = None
        for attempt in range(attempts):
            try:
                resp = self._client.post(url, json=body)
            except httpx.TimeoutException as exc:
                last = Timeout(f"{url} timed out after {self.timeout_s}s", role=self.role)
                last.__cause__ = exc
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"{url} unreachable: {exc}", role=self.role)
                last.__cause__ = exc
            else:
                if resp.status_code >= 500:
                    last = BackendUnavailable(f"{url} returned HTTP {resp.status_code}", role=self.role)
                elif resp.status_code >= 400:
                    raise BackendError(f"{url} rejected request: HTTP {resp.status_code}", role=self.role)
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise BackendError(f"{url} returned non-JSON body", role=self.role) from exc
            logger.warning("%s attempt %d/%d failed: %s", self.role, attempt + 1, attempts, last)
        assert last is not None
        raise last

    def close(self):
        self._client.close()


class HttpEmbedder(_HttpRole):
    role = "embedder"

    def __init__(self, base_url: str, dim: int = DEFAULT_DIM, **kw):
        super().__init__(base_url, **kw)
        self.dim = dim

    def embed(self, modality: str, payload: bytes, key: Optional[str] = None) -> np.ndarray:
        if not payload:
            raise PreconditionError("empty embedding payload")
        body = {"modality": modality, "data_b64": base64.b64encode(payload).decode("ascii")}
        data = self._post("embed", body)
        try:
            values = data["embedding"]
        except (KeyError, TypeError) as exc:
            raise BackendError("embed response lacks 'embedding'", role=self.role) from exc
        return check_embedding(values, self.dim)


class HttpTranscriber(_HttpRole):
    role = "transcriber"

    def transcribe(self, samples: np.ndarray, offset_s: float = 0.0) -> List[TranscriptSegment]:
        body = {"audio_b64": base64.b64encode(wav_bytes(samples)).decode("ascii")}
        data = self._post("transcribe", body)
        try:
            segs = [
                TranscriptSegment(TimeInterval(offset_s + float(s["start"]), offset_s + float(s["end"])), str(s["text"]))
                for s in data["segments"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"bad transcribe response: {exc}", role=self.role) from exc
        return sorted(segs, key=lambda s: s.interval)


class HttpDescriber(_HttpRole):
    role = "describer"

    def describe(self, image: bytes, key: Optional[str] = None, max_tokens: int = 200) -> str:
        body = {"image_b64": base64.b64encode(image).decode("ascii"), "max_tokens": max_tokens}
        return _text_field(self._post("describe", body), self.role)


class HttpReasoner(_HttpRole):
    role = "reasoner"

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 300) -> str:
        if not prompt or not prompt.strip():
            raise PreconditionError("empty prompt")
        body = {"prompt": prompt, "temperature": temperature, "max_tokens": max_tokens}
        return _text_field(self._post("complete", body), self.role)


def _text_field(data, role: str) -> str:
    if not isinstance(data, dict) or not isinstance(data.get("text"), str):
        raise BackendError("response lacks a 'text' string", role=role)
    return data["text"]


def http_suite(endpoints: Dict[str, str], dim: int = DEFAULT_DIM, timeout_s: float = 60.0,
               retries: int = 1, transport: Optional[httpx.BaseTransport] = None) -> BackendSuite:
    """Build a remote suite from ``{"embed": url, "transcribe": url, "describe": url,
    "complete": url, "confidence": url?}``. Missing roles fall back to ``"default"``."""
    def url(role):
        value = endpoints.get(role) or endpoints.get("default")
        if not value:
            raise PreconditionError(f"no endpoint configured for {role}")
        return value

    kw = dict(timeout_s=timeout_s, retries=retries, transport=transport)
    confidence = HttpReasoner(endpoints["confidence"], **kw) if endpoints.get("confidence") else None
    return BackendSuite(
        embedder=HttpEmbedder(url("embed"), dim=dim, **kw),
        transcriber=HttpTranscriber(url("transcribe"), **kw),
        describer=HttpDescriber(url("describe"), **kw),
        reasoner=HttpReasoner(url("complete"), **kw),
        confidence=confidence,
    )


# --------------------------------------------------------------------------- stub server

def handle_request(suite: BackendSuite, route: str, body: Dict[str, Any]) -> Dict[str, Any]:
    """Answer one wire-protocol request from a (stub) suite."""
    if route == "embed":
        if "data_b64" in body:
            payload = base64.b64decode(body["data_b64"])
        else:
            payload = str(body["uri"]).encode()
        key = payload.decode("utf-8", "replace") if body.get("modality") == "text" else None
        vec = suite.embedder.embed(body["modality"], payload, key)
        return {"embedding": [float(x) for x in vec]}
    if route == "transcribe":
        track = parse_wav(base64.b64decode(body["audio_b64"]))
        segs = suite.transcriber.transcribe(track.samples, 0.0)
        return {"segments": [s.to_dict() for s in segs]}
    if route == "describe":
        text = suite.describer.describe(base64.b64decode(body["image_b64"]), None, int(body.get("max_tokens", 200)))
        return {"text": text}
    if route == "complete":
        text = suite.reasoner.complete(body["prompt"], float(body.get("temperature", 0.0)),
                                       int(body.get("max_tokens", 300)))
        return {"text": text}
    raise KeyError(route)


def make_stub_server(suite: BackendSuite, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            route = self.path.strip("/")
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                reply = handle_request(suite, route, body)
                status = 200
            except KeyError as exc:
                reply, status = {"error": f"unknown route or field {exc}"}, 404 if route not in ("embed", "transcribe", "describe", "complete") else 400
            except (PreconditionError, ValueError) as exc:
                reply, status = {"error": str(exc)}, 400
            data = json.dumps(reply).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            logger.debug("stub server: " + fmt, *args)

    return ThreadingHTTPServer((host, port), Handler)


def serve_stub(suite: BackendSuite, host: str = "127.0.0.1", port: int = 8765):
    server = make_stub_server(suite, host, port)
    logger.info("stub backend listening on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    finally:
        server.server_close()
