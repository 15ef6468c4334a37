"""Confidence-gated hierarchical retrieval over a MemoryStore.

``retrieve`` classifies the query, tries to answer from ThetaEvent summaries,
and only when the reported confidence is not strictly above ``tau`` falls back
to detailed recall over the consolidated segments, whose candidate answer is
then reconciled with the fast one.
"""
from __future__ import annotations

import enum
import json
import logging
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import templates
from .backends import BackendSuite, Reasoner
from .errors import BackendError, NoEvidence, PreconditionError, RetrievalError
from .segmentation import TimeInterval
from .store import MemoryStore, top_k_similar

logger = logging.getLogger(__name__)

LETTERS = ("A", "B", "C", "D")

# call-counter labels that belong to detailed recall
DETAILED_LABELS = ("query_embed", "frame_selection", "audio_selection", "synthesis", "reflection",
                   "describe", "transcribe")


class QueryType(str, enum.Enum):
    VISUAL = "Visual"
    AUDITORY = "Auditory"
    CROSS_MODAL = "CrossModal"
    SUMMARY = "Summary"


CLASSIFIER_LABELS = {
    "VIDEO": QueryType.VISUAL,
    "AUDIO": QueryType.AUDITORY,
    "VIDEO+AUDIO": QueryType.CROSS_MODAL,
    "SUMMARY": QueryType.SUMMARY,
}


@dataclass(frozen=True)
class RetrievalConfig:
    tau: float = 0.75
    k: int = 5
    delta_s: float = 2.0
    fallback_sim: float = 0.4
    summary_top_n: int = 20
    classify_max_tokens: int = 16
    answer_max_tokens: int = 300
    selection_max_tokens: int = 200
    reflection_temperature: float = 0.2

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise PreconditionError("tau must lie in (0, 1)")
        if self.k < 1:
            raise PreconditionError("k must be at least 1")
        if self.delta_s < 0:
            raise PreconditionError("delta_s must be non-negative")
        if self.summary_top_n < 1:
            raise PreconditionError("summary_top_n must be at least 1")


@dataclass(frozen=True)
class Evidence:
    segment_id: str
    modality: str  # "visual" or "auditory"
    excerpt: str
    interval: TimeInterval

    def to_dict(self) -> Dict:
        return {"segment_id": self.segment_id, "modality": self.modality, "excerpt": self.excerpt,
                "interval": self.interval.to_list()}


@dataclass
class RetrievalResult:
    answer: str
    pathway: str  # "fast" or "detailed"
    confidence: float
    query_type: QueryType
    evidence: List[Evidence] = field(default_factory=list)
    elapsed_ms: float = 0.0
    backend_call_counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> Dict:
        out = {
            "answer": self.answer,
            "pathway": self.pathway,
            "confidence": self.confidence,
            "query_type": self.query_type.value,
            "evidence": [e.to_dict() for e in self.evidence],
            "backend_call_counts": dict(sorted(self.backend_call_counts.items())),
        }
        if timing:
            out["elapsed_ms"] = self.elapsed_ms
        return out


@dataclass(frozen=True)
class Query:
    """A question, optionally multiple choice (``choices`` maps letter -> text)."""

    text: str
    choices: Optional[Dict[str, str]] = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise PreconditionError("query text is empty")

    @property
    def is_mcq(self) -> bool:
        return bool(self.choices)

    def render(self) -> str:
        if not self.choices:
            return self.text
        opts = "\n".join(f"{k}. {v}" for k, v in sorted(self.choices.items()))
        return f"{self.text}\nOptions:\n{opts}"


def _as_query(q) -> Query:
    return q if isinstance(q, Query) else Query(str(q))


# --------------------------------------------------------------------------- parsing

_FIELD = r"^\s*\**{name}\**\s*:\**\s*(.*?)\s*$"  # tolerates markdown bold


def _field(text: str, name: str) -> Optional[str]:
    m = re.search(_FIELD.format(name=name), text, re.IGNORECASE | re.MULTILINE)
    return m.group(1) if m else None


def parse_confidence(raw: Optional[str]) -> Optional[float]:
    if raw is None:
        return None
    m = re.match(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?", raw.strip())
    if not m:
        return None
    value = float(m.group(0))
    if not 0.0 <= value <= 1.0:
        logger.warning("confidence %s outside [0, 1]; clamping", value)
        value = min(1.0, max(0.0, value))
    return value


def parse_answer_confidence(text: str) -> Tuple[Optional[str], float, bool]:
    """Parse ``ANSWER:`` / ``CONFIDENCE:`` lines.

    Returns ``(answer or None for NONE, confidence, well_formed)``; malformed
    responses give ``(None, 0.0, False)``.
    """
    answer = _field(text, "ANSWER")
    conf = parse_confidence(_field(text, "CONFIDENCE"))
    if answer is None or conf is None or not answer:
        return None, 0.0, False
    if answer.strip().strip(".").upper() == "NONE":
        return None, conf, True
    return answer, conf, True


def normalize_choice(answer: Optional[str], letters: Sequence[str] = LETTERS) -> Optional[str]:
    """Reduce an answer like ``"B"``, ``"(b)"`` or ``"B. Chevron"`` to its letter."""
    if answer is None:
        return None
    m = re.match(r"^\W*([A-Za-z])(?:\W|$)", answer.strip())
    if m and m.group(1).upper() in letters:
        return m.group(1).upper()
    return None


def _finalize(answer: Optional[str], q: Query) -> Optional[str]:
    if answer is None:
        return None
    return normalize_choice(answer, tuple(q.choices)) if q.is_mcq else answer.strip()


# --------------------------------------------------------------------------- steps

def classify_query(q, reasoner: Reasoner, cfg: RetrievalConfig = RetrievalConfig(),
                   counts: Optional[Counter] = None) -> QueryType:
    q = _as_query(q)
    prompt = templates.render("query_classification", question=q.text)
    _tick(counts, "classify")
    raw = reasoner.complete(prompt, 0.0, cfg.classify_max_tokens)
    label = raw.strip().strip("\"'`.").upper().replace(" ", "")
    if label in CLASSIFIER_LABELS:
        return CLASSIFIER_LABELS[label]
    logger.warning("unrecognised query type %r; routing as cross-modal", raw.strip()[:40])
    return QueryType.CROSS_MODAL


def select_summaries(q: Query, store: MemoryStore, suite: BackendSuite, cfg: RetrievalConfig,
                     counts: Optional[Counter] = None):
    thetas = store.thetas()
    if len(thetas) <= cfg.summary_top_n:
        return thetas
    _tick(counts, "fast_embed")
    qv = suite.embedder.embed("text", q.text.encode("utf-8"), q.text)
    ranked = top_k_similar(qv, [(t.source_id, t.v) for t in thetas], cfg.summary_top_n)
    keep = {sid for sid, _ in ranked}
    return [t for t in thetas if t.source_id in keep]


def fast_retrieve(q, store: MemoryStore, suite: BackendSuite, cfg: RetrievalConfig = RetrievalConfig(),
                  counts: Optional[Counter] = None) -> Tuple[Optional[str], float]:
    """Answer from summaries alone. ``(None, c)`` signals that escalation is needed;
    an explicit NONE answer always carries confidence 0.0."""
    q = _as_query(q)
    thetas = select_summaries(q, store, suite, cfg, counts)
    if not thetas:
        raise PreconditionError("store has no ThetaEvents")
    summaries = "\n".join(
        f"{i + 1}. [{t.temporal_ref.start_s:.1f}-{t.temporal_ref.end_s:.1f}s] {t.summary}"
        for i, t in enumerate(thetas)
    )
    prompt = templates.render("fast_answer", question=q.render(), summaries=summaries)
    _tick(counts, "fast_answer")
    raw = suite.confidence.complete(prompt, 0.0, cfg.answer_max_tokens)
    answer, conf, ok = parse_answer_confidence(raw)
    if not ok:
        logger.warning("malformed fast-retrieval response; escalating")
        return None, 0.0
    if answer is None:
        return None, 0.0
    answer = _finalize(answer, q)
    if answer is None:
        # multiple choice answer that is not a letter
        return None, 0.0
    return answer, conf


def expand_windows(seeds: Sequence[TimeInterval], delta_s: float) -> List[TimeInterval]:
    """Pad each seed by ``delta_s`` on both sides (clamped at 0) and merge
    overlapping or touching windows into a sorted disjoint list."""
    if not seeds:
        raise PreconditionError("no seed intervals")
    padded = sorted((max(0.0, s.start_s - delta_s), s.end_s + delta_s) for s in seeds)
    merged: List[List[float]] = []
    for start, end in padded:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [TimeInterval(s, e) for s, e in merged]


def overlapping_segments(store: MemoryStore, windows: Sequence[TimeInterval]) -> List[str]:
    """Consolidated segment ids whose closed interval meets any window."""
    return [
        m.id for m in store.consolidated_segments()
        if any(m.interval.overlaps(w) for w in windows)
    ]


def _evidence_for(store: MemoryStore, sid: str, target: QueryType) -> List[Evidence]:
    m = store.segments[sid]
    out = []
    if target in (QueryType.VISUAL, QueryType.CROSS_MODAL, QueryType.SUMMARY):
        out += [Evidence(sid, "visual", t.text, m.interval) for t in m.descriptions]
    if target in (QueryType.AUDITORY, QueryType.CROSS_MODAL, QueryType.SUMMARY):
        out += [Evidence(sid, "auditory", t.text, TimeInterval(t.start_s, t.end_s)) for t in m.transcripts]
    return out


def extract_overlapping(store: MemoryStore, windows: Sequence[TimeInterval], target: QueryType) -> List[Evidence]:
    """Modality-specific content from consolidated segments overlapping the windows.

    Visual targets yield frame descriptions, auditory targets transcripts, and
    cross-modal targets both.
    """
    out: List[Evidence] = []
    for sid in overlapping_segments(store, windows):
        out += _evidence_for(store, sid, target)
    return out


def cross_modal_evidence(q_embed, store: MemoryStore, cfg: RetrievalConfig,
                         target: QueryType = QueryType.CROSS_MODAL):
    """Seed search, window expansion, then overlap extraction.

    Returns ``(seeds, windows, evidence)``.
    """
    seeds = top_k_similar(q_embed, [(t.source_id, t.v) for t in store.thetas()], cfg.k)
    if not seeds:
        return [], [], []
    windows = expand_windows([store.segments[sid].interval for sid, _ in seeds], cfg.delta_s)
    return seeds, windows, extract_overlapping(store, windows, target)


def _frame_selection(q: Query, store: MemoryStore, suite: BackendSuite, cfg: RetrievalConfig,
                     counts: Optional[Counter]) -> List[Evidence]:
    pool = [(m, t) for m in store.consolidated_segments() for t in m.descriptions]
    if not pool:
        return []
    listing = "\n".join(f"{i}. [{t.start_s:.1f}s] {t.text}" for i, (_, t) in enumerate(pool))
    prompt = templates.render("frame_selection", question=q.render(), element=q.text, frames=listing)
    _tick(counts, "frame_selection")
    raw = suite.reasoner.complete(prompt, 0.0, cfg.selection_max_tokens)
    picks: List[int] = []
    for tok in re.findall(r"\d+", raw):
        i = int(tok)
        if i < len(pool) and i not in picks:
            picks.append(i)
        if len(picks) == 5:
            break
    return [Evidence(pool[i][0].id, "visual", pool[i][1].text, pool[i][0].interval) for i in picks]


def parse_time_frames(raw: str) -> List[TimeInterval]:
    m = re.search(r"\[.*\]", raw, re.DOTALL)
    if not m:
        logger.warning("audio selection response has no JSON array")
        return []
    try:
        items = json.loads(m.group(0))
    except ValueError:
        logger.warning("audio selection response is not valid JSON")
        return []
    out = []
    for item in items[:5] if isinstance(items, list) else []:
        try:
            start, end = float(item["start"]), float(item["end"])
        except (KeyError, TypeError, ValueError):
            continue
        start = max(0.0, start)
        if end > start:
            out.append(TimeInterval(start, end))
    return out


def _audio_selection(q: Query, store: MemoryStore, suite: BackendSuite, cfg: RetrievalConfig,
                     counts: Optional[Counter]) -> List[Evidence]:
    lines = [
        f"[{t.start_s:.1f}-{t.end_s:.1f}] {t.text}"
        for m in store.consolidated_segments() for t in m.transcripts
    ]
    prompt = templates.render("audio_selection", question=q.render(),
                              transcripts="\n".join(lines) or "(no speech transcribed)")
    _tick(counts, "audio_selection")
    frames = parse_time_frames(suite.reasoner.complete(prompt, 0.0, cfg.selection_max_tokens))
    if not frames:
        return []
    return extract_overlapping(store, expand_windows(frames, 0.0), QueryType.AUDITORY)


def gather_evidence(q, qtype: QueryType, store: MemoryStore, suite: BackendSuite,
                    cfg: RetrievalConfig = RetrievalConfig(), counts: Optional[Counter] = None) -> List[Evidence]:
    """Modality-specific evidence search; raises NoEvidence when nothing is found."""
    q = _as_query(q)
    if qtype is QueryType.SUMMARY:
        qtype = QueryType.CROSS_MODAL

    if qtype is QueryType.AUDITORY:
        evidence = _audio_selection(q, store, suite, cfg, counts)
    else:
        _tick(counts, "query_embed")
        q_embed = suite.embedder.embed("text", q.text.encode("utf-8"), q.text)
        if qtype is QueryType.VISUAL:
            seeds = top_k_similar(q_embed, [(t.source_id, t.v) for t in store.thetas()], cfg.k)
            if not seeds or seeds[0][1] < cfg.fallback_sim:
                logger.info("best visual similarity %.3f below %.2f; using caption search",
                            seeds[0][1] if seeds else float("nan"), cfg.fallback_sim)
                evidence = _frame_selection(q, store, suite, cfg, counts)
            else:
                evidence = [e for sid, _ in seeds for e in _evidence_for(store, sid, QueryType.VISUAL)]
        else:
            _, _, evidence = cross_modal_evidence(q_embed, store, cfg)
    if not evidence:
        raise NoEvidence("detailed recall found no evidence")
    return evidence


def synthesize(q, evidence: Sequence[Evidence], store: MemoryStore, reasoner: Reasoner,
               cfg: RetrievalConfig = RetrievalConfig(), counts: Optional[Counter] = None) -> Optional[str]:
    q = _as_query(q)
    ids = []
    for e in evidence:
        if e.segment_id not in ids:
            ids.append(e.segment_id)
    context = "\n".join(
        f"- [{store.theta_events[i].temporal_ref.start_s:.1f}-{store.theta_events[i].temporal_ref.end_s:.1f}s] "
        f"{store.theta_events[i].summary}"
        for i in ids if i in store.theta_events
    ) or "(none)"
    lines = "\n".join(
        f"- ({e.modality}, {e.interval.start_s:.1f}-{e.interval.end_s:.1f}s) {e.excerpt}" for e in evidence
    )
    prompt = templates.render("final_answer", question=q.render(), context=context, evidence=lines)
    _tick(counts, "synthesis")
    raw = reasoner.complete(prompt, cfg.reflection_temperature, cfg.answer_max_tokens)
    answer = _field(raw, "Answer")
    if answer is None:
        answer = raw.strip()
    if not answer or answer.upper() == "NONE":
        return None
    return _finalize(answer, q)


def detailed_recall(q, qtype: QueryType, store: MemoryStore, suite: BackendSuite,
                    cfg: RetrievalConfig = RetrievalConfig(),
                    counts: Optional[Counter] = None) -> Tuple[Optional[str], List[Evidence]]:
    evidence = gather_evidence(q, qtype, store, suite, cfg, counts)
    return synthesize(q, evidence, store, suite.reasoner, cfg, counts), evidence


def reconcile(q, fast_answer: Optional[str], fast_confidence: float, detailed_answer: Optional[str],
              evidence: Sequence[Evidence], reasoner: Reasoner, cfg: RetrievalConfig = RetrievalConfig(),
              counts: Optional[Counter] = None) -> Tuple[str, float]:
    """Merge fast and detailed candidates into one answer and confidence.

    A lone candidate passes through (a lone detailed answer gets 0.5, since
    nothing scored it). Two candidates go to the reasoner; if its reply cannot
    be parsed the detailed answer wins at 0.5.
    """
    q = _as_query(q)
    if fast_answer is None and detailed_answer is None:
        raise PreconditionError("no candidate answer to reconcile")
    if detailed_answer is None:
        return fast_answer, fast_confidence
    if fast_answer is None:
        return detailed_answer, 0.5

    captions = [e.excerpt for e in evidence if e.modality == "visual"][:10]
    transcripts = [e.excerpt for e in evidence if e.modality == "auditory"][:10]
    prompt = templates.render(
        "reflection",
        question=q.render(),
        fast_answer=fast_answer,
        fast_confidence=f"{fast_confidence:.2f}",
        detailed_answer=detailed_answer,
        captions="\n".join(f"- {c}" for c in captions) or "(none)",
        transcripts="\n".join(f"- {t}" for t in transcripts) or "(none)",
    )
    _tick(counts, "reflection")
    raw = reasoner.complete(prompt, cfg.reflection_temperature, cfg.answer_max_tokens)
    answer, conf, ok = parse_answer_confidence(raw)
    answer = _finalize(answer, q) if ok else None
    if answer is None:
        logger.warning("unusable reconciliation output; keeping the detailed answer")
        return detailed_answer, 0.5
    return answer, conf


def retrieve(q, store: MemoryStore, suite: BackendSuite, cfg: RetrievalConfig = RetrievalConfig()) -> RetrievalResult:
    """Full query path. The fast answer is returned only when its confidence is
    strictly greater than ``cfg.tau``."""
    q = _as_query(q)
    counts: Counter = Counter()
    started = time.perf_counter()
    stage = "classify"
    evidence: List[Evidence] = []
    try:
        qtype = classify_query(q, suite.reasoner, cfg, counts)
        stage = "fast_retrieval"
        fast_answer, fast_conf = fast_retrieve(q, store, suite, cfg, counts)
        if fast_conf > cfg.tau:
            return RetrievalResult(fast_answer, "fast", fast_conf, qtype, [],
                                   _ms(started), dict(counts))
        stage = "detailed_recall"
        try:
            evidence = gather_evidence(q, qtype, store, suite, cfg, counts)
            detailed_answer = synthesize(q, evidence, store, suite.reasoner, cfg, counts)
        except NoEvidence:
            detailed_answer = None
        stage = "reconcile"
        if fast_answer is None and detailed_answer is None:
            answer, conf = "NONE", 0.0
        else:
            answer, conf = reconcile(q, fast_answer, fast_conf, detailed_answer, evidence,
                                     suite.reasoner, cfg, counts)
    except BackendError as exc:
        raise RetrievalError(stage, exc, evidence) from exc
    return RetrievalResult(answer, "detailed", conf, qtype, evidence, _ms(started), dict(counts))


def _tick(counts: Optional[Counter], label: str) -> None:
    if counts is not None:
        counts[label] += 1


def _ms(started: float) -> float:
    return (time.perf_counter() - started) * 1000.0
