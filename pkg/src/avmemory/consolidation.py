"""Novelty filtering of segments and semantic replay into ThetaEvents."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import templates
from .backends import Reasoner
from .encoding import ShortTermMemory
from .errors import DimensionMismatch, EmptyInput, EmptySequence, PreconditionError, SummaryEmpty
from .segmentation import TimeInterval

logger = logging.getLogger(__name__)

GAMMA = 0.85
SCOPES = ("all", "last")
SUMMARY_TEMPERATURE = 0.7
SUMMARY_MAX_TOKENS = 300


@dataclass(eq=False)
class ThetaEvent:
    """Long-term unit: representative vector, one-sentence gist, and links back
    to the source segment."""

    source_id: str
    v: np.ndarray
    summary: str
    temporal_ref: TimeInterval
    key_visual_refs: List[str] = field(default_factory=list)
    key_audio_refs: List[str] = field(default_factory=list)


def representative_embedding(vectors) -> np.ndarray:
    """Componentwise mean (float64) of a non-empty embedding sequence."""
    if len(vectors) == 0:
        raise EmptySequence("cannot average an empty embedding sequence")
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionMismatch("embeddings in a sequence must share one dimension")
    return mat.mean(axis=0)


def cosine(a, b) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


def consolidate(vectors: Sequence, gamma: float = GAMMA, scope: str = "all") -> List[int]:
    """Indices of segments kept as novel, given their representative vectors in
    temporal order.

    With ``scope="all"`` a segment survives only if its cosine to every earlier
    survivor is below ``gamma``; ``scope="last"`` compares against the most
    recent survivor only.
    """
    if scope not in SCOPES:
        raise PreconditionError(f"scope must be one of {SCOPES}")
    if len(vectors) == 0:
        raise EmptyInput("no segments to consolidate")
    unit = unit_rows(vectors)
    kept = [0]
    for i in range(1, len(unit)):
        pool = kept if scope == "all" else kept[-1:]
        sims = np.clip(unit[pool] @ unit[i], -1.0, 1.0)
        if np.all(sims < gamma):
            kept.append(i)
    return kept


def unit_rows(vectors) -> np.ndarray:
    """Row-normalised float64 matrix; zero rows stay zero (cosine 0 convention)."""
    mat = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def formatted_context(m: ShortTermMemory) -> dict:
    descriptions = "\n".join(f"[{t.start_s:.2f}s] {t.text}" for t in m.descriptions) or "(none)"
    transcription = "\n".join(f"[{t.start_s:.2f}-{t.end_s:.2f}s] {t.text}" for t in m.transcripts) or "(none)"
    return {"descriptions": descriptions, "transcription": transcription}


def replay_prompt(m: ShortTermMemory) -> str:
    if not m.texts:
        raise PreconditionError(f"{m.id} has no descriptions or transcripts to summarize")
    return templates.render("semantic_replay", **formatted_context(m))


def semantic_replay(m: ShortTermMemory, reasoner: Reasoner) -> str:
    text = reasoner.complete(replay_prompt(m), SUMMARY_TEMPERATURE, SUMMARY_MAX_TOKENS).strip()
    if not text:
        raise SummaryEmpty(f"empty summary for {m.id}")
    return text


def build_theta_event(m: ShortTermMemory, summary: str) -> ThetaEvent:
    if not summary or not summary.strip():
        raise PreconditionError("summary must be non-empty")
    return ThetaEvent(
        source_id=m.id,
        v=representative_embedding(m.vectors()),
        summary=summary,
        temporal_ref=m.interval,
        key_visual_refs=list(m.visual_refs),
        key_audio_refs=list(m.audio_refs),
    )


def consolidate_segments(
    segments: Sequence[ShortTermMemory],
    reasoner: Reasoner,
    gamma: float = GAMMA,
    scope: str = "all",
    workers: int = 1,
) -> tuple[List[int], List[ThetaEvent]]:
    """Filter segments and replay the survivors into ThetaEvents (in order)."""
    reps = [representative_embedding(m.vectors()) for m in segments]
    kept = consolidate(reps, gamma, scope)

    def job(i):
        return build_theta_event(segments[i], semantic_replay(segments[i], reasoner))

    if workers <= 1:
        events = [job(i) for i in kept]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            events = list(pool.map(job, kept))
    logger.info("consolidated %d of %d segments", len(kept), len(segments))
    return kept, events
