"""Episodic memory engine for long audiovisual streams.

Streams are cut into perceptual episodes, encoded through pluggable model
backends, consolidated into summarised long-term events, and queried through
a confidence-gated fast/detailed retrieval path.
"""
from .backends import BackendSuite, Scenario, stub_suite
from .config import EngineConfig
from .consolidation import ThetaEvent, consolidate, cosine, representative_embedding
from .encoding import ShortTermMemory, encode_segment, filter_redundant_frames
from .media import AudioTrack, Frame, MediaBundle, load_bundle, parse_pnm, parse_wav, sample_frames
from .pipeline import build_store, ingest
from .retrieval import Query, QueryType, RetrievalConfig, RetrievalResult, retrieve
from .segmentation import SegmentationConfig, TimeInterval, audio_level_db, detect_boundaries, event_integrity_rate, ssim
from .store import MemoryStore, load, save, top_k_similar

__version__ = "0.1.0"
