"""Memory formation: bundle -> segments -> encoded records -> consolidated store."""
from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

from .backends import BackendSuite
from .config import EngineConfig
from .consolidation import consolidate_segments
from .encoding import encode_all
from .errors import MemoryEngineError, StageError
from .media import MediaBundle, sample_frames
from .segmentation import detect_boundaries
from .store import MemoryStore, save

logger = logging.getLogger(__name__)


@dataclass
class IngestReport:
    segments: int
    consolidated: int
    theta_events: int
    wall_time_s: float

    def to_dict(self):
        return {
            "segments": self.segments,
            "consolidated": self.consolidated,
            "theta_events": self.theta_events,
            "wall_time_s": self.wall_time_s,
        }


def build_store(bundle: MediaBundle, suite: BackendSuite, cfg: Optional[EngineConfig] = None,
                workers: Optional[int] = None) -> MemoryStore:
    """Run segmentation, encoding, consolidation and semantic replay in memory."""
    cfg = cfg or EngineConfig()
    workers = workers or cfg.workers

    with _stage("segmentation"):
        sampled = sample_frames(bundle, cfg.fps) if bundle.frames else []
        intervals = detect_boundaries(sampled, bundle.audio, cfg.segmentation(), bundle.duration_s)
    with _stage("encoding"):
        segments = encode_all(intervals, bundle, suite, fps=cfg.fps,
                              keyframe_threshold=cfg.keyframe_threshold, workers=workers)
    with _stage("consolidation"):
        kept, events = consolidate_segments(segments, suite.reasoner, cfg.gamma,
                                            cfg.consolidation_scope, workers)

    store = MemoryStore(dim=suite.dim, config=cfg.snapshot())
    with _stage("store"):
        for m in segments:
            store.add_segment(m)
        store.consolidated = [segments[i].id for i in kept]
        for ev in events:
            store.theta_events[ev.source_id] = ev
    logger.info("ingest: %d segments, %d consolidated", len(segments), len(kept))
    return store


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (MemoryEngineError, OSError) as exc:
        raise StageError(name, exc) from exc


def ingest(bundle: MediaBundle, suite: BackendSuite, store_dir, cfg: Optional[EngineConfig] = None,
           workers: Optional[int] = None) -> IngestReport:
    started = time.perf_counter()
    store = build_store(bundle, suite, cfg, workers)
    with _stage("save"):
        save(store, store_dir)
    return IngestReport(len(store.segments), len(store.consolidated), len(store.theta_events),
                        time.perf_counter() - started)
