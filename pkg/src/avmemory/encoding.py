"""Per-segment perceptual encoding into ShortTermMemory records."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .backends import BackendSuite
from .errors import BackendError, PreconditionError, SegmentEncodingError
from .media import Frame, MediaBundle, pgm_bytes, sample_frames, wav_bytes
from .segmentation import TimeInterval, visual_distance

logger = logging.getLogger(__name__)

KEYFRAME_THRESHOLD = 0.3
DESCRIBE_MAX_TOKENS = 200
MAX_WORKERS = 8


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    timestamp_s: float
    modality: str  # "image" or "audio"
    vector: np.ndarray  # float32


@dataclass(frozen=True)
class TextRecord:
    kind: str  # "visual" or "transcript"
    text: str
    start_s: float
    end_s: float  # equals start_s for frame descriptions
    ref: Optional[str] = None  # content ref of the frame a description came from


@dataclass(eq=False)
class ShortTermMemory:
    """Detailed episodic record for one segment.

    ``content_refs`` are store-relative paths; the bytes live in
    ``MemoryStore.content`` until the store is saved.
    """

    id: str
    interval: TimeInterval
    embeddings: List[EmbeddingRecord]
    texts: List[TextRecord]
    content_refs: List[str]
    content: Dict[str, bytes] = field(default_factory=dict, repr=False)

    @property
    def descriptions(self) -> List[TextRecord]:
        return [t for t in self.texts if t.kind == "visual"]

    @property
    def transcripts(self) -> List[TextRecord]:
        return [t for t in self.texts if t.kind == "transcript"]

    @property
    def visual_refs(self) -> List[str]:
        return [r for r in self.content_refs if not r.endswith(".wav")]

    @property
    def audio_refs(self) -> List[str]:
        return [r for r in self.content_refs if r.endswith(".wav")]

    def vectors(self) -> np.ndarray:
        return np.stack([e.vector for e in self.embeddings])


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, MAX_WORKERS))


def segment_id(index: int) -> str:
    return f"seg-{index:04d}"


def filter_redundant_frames(frames: Sequence[Frame], threshold: float = KEYFRAME_THRESHOLD) -> List[Frame]:
    """Greedy key-frame pass: keep the first frame, then any frame whose
    structural distance to the last kept frame is at least ``threshold``."""
    kept: List[Frame] = []
    for f in frames:
        if not kept or visual_distance(f, kept[-1]) >= threshold:
            kept.append(f)
    return kept


def frames_in(frames: Sequence[Frame], interval: TimeInterval, closed_end: bool = False) -> List[Frame]:
    return [
        f for f in frames
        if interval.start_s <= f.timestamp_s and (f.timestamp_s < interval.end_s or (closed_end and f.timestamp_s == interval.end_s))
    ]


def encode_segment(
    interval: TimeInterval,
    bundle: MediaBundle,
    suite: BackendSuite,
    *,
    seg_id: str = "seg-0000",
    fps: float = 2.0,
    keyframe_threshold: float = KEYFRAME_THRESHOLD,
    sampled: Optional[Sequence[Frame]] = None,
    closed_end: bool = False,
) -> ShortTermMemory:
    """Describe, transcribe and embed one segment.

    ``sampled`` lets a caller reuse frames already sampled for the whole
    bundle; otherwise the bundle is sampled at ``fps``.
    """
    if interval.start_s < 0 or interval.end_s > bundle.duration_s + 1e-9:
        raise PreconditionError(f"{interval} lies outside the bundle")
    if sampled is None:
        sampled = sample_frames(bundle, fps) if bundle.frames else []
    try:
        return _encode(interval, bundle, suite, seg_id, keyframe_threshold, sampled, closed_end)
    except BackendError as exc:
        raise SegmentEncodingError(seg_id, exc) from exc


def _encode(interval, bundle, suite, seg_id, keyframe_threshold, sampled, closed_end):
    keys = filter_redundant_frames(frames_in(sampled, interval, closed_end), keyframe_threshold)
    embeddings: List[EmbeddingRecord] = []
    texts: List[TextRecord] = []
    refs: List[str] = []
    content: Dict[str, bytes] = {}

    for n, frame in enumerate(keys):
        ref = f"content/{seg_id}/frame-{n:03d}.pgm"
        data = pgm_bytes(frame.luma)
        caption = suite.describer.describe(data, frame.source or ref, DESCRIBE_MAX_TOKENS)
        vec = suite.embedder.embed("image", data, frame.source or ref)
        texts.append(TextRecord("visual", caption.strip(), frame.timestamp_s, frame.timestamp_s, ref))
        embeddings.append(EmbeddingRecord(frame.timestamp_s, "image", vec))
        refs.append(ref)
        content[ref] = data

    samples = bundle.audio.slice(interval.start_s, interval.end_s)
    if len(samples):
        ref = f"content/{seg_id}/audio.wav"
        data = wav_bytes(samples)
        for seg in suite.transcriber.transcribe(samples, interval.start_s):
            texts.append(TextRecord("transcript", seg.text.strip(), seg.interval.start_s, seg.interval.end_s))
        mid = (interval.start_s + interval.end_s) / 2.0
        embeddings.append(EmbeddingRecord(mid, "audio", suite.embedder.embed("audio", data, ref)))
        refs.append(ref)
        content[ref] = data

    if not embeddings:
        raise PreconditionError(f"{seg_id} has neither key frames nor audio")
    return ShortTermMemory(seg_id, interval, embeddings, texts, refs, content)


def encode_all(
    intervals: Sequence[TimeInterval],
    bundle: MediaBundle,
    suite: BackendSuite,
    *,
    fps: float = 2.0,
    keyframe_threshold: float = KEYFRAME_THRESHOLD,
    workers: Optional[int] = None,
) -> List[ShortTermMemory]:
    """Encode every interval, in parallel, returning records in interval order."""
    sampled = sample_frames(bundle, fps) if bundle.frames else []
    workers = workers or default_workers()
    last = len(intervals) - 1

    def job(i):
        return encode_segment(
            intervals[i], bundle, suite, seg_id=segment_id(i), fps=fps,
            keyframe_threshold=keyframe_threshold, sampled=sampled, closed_end=(i == last),
        )

    if workers == 1:
        return [job(i) for i in range(len(intervals))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(len(intervals))))
