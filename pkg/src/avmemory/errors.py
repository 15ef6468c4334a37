"""Exception hierarchy shared by every stage of the engine."""
from __future__ import annotations


class MemoryEngineError(Exception):
    """Base class for all engine errors."""


class PreconditionError(MemoryEngineError, ValueError):
    """An operation was called with arguments that violate its contract."""


# media

class MalformedWav(MemoryEngineError):
    pass


class UnsupportedFormat(MemoryEngineError):
    pass


class MalformedPnm(MemoryEngineError):
    pass


class UnsupportedMaxval(MemoryEngineError):
    pass


class InvalidFps(PreconditionError):
    pass


class EmptyBundle(PreconditionError):
    pass


class InvalidBundle(MemoryEngineError):
    pass


class BundleNotFound(MemoryEngineError):
    pass


# segmentation / vectors

class DimensionMismatch(MemoryEngineError, ValueError):
    pass


class EmptyWindow(PreconditionError):
    pass


class EmptyInput(PreconditionError):
    pass


class EmptyGroundTruth(PreconditionError):
    pass


class EmptySequence(PreconditionError):
    pass


# backends

class BackendError(MemoryEngineError):
    """Raised by a backend role; ``role`` names which one failed."""

    def __init__(self, message: str, role: str | None = None):
        super().__init__(message)
        self.role = role


class BackendUnavailable(BackendError):
    pass


class Timeout(BackendError):
    pass


class SegmentEncodingError(MemoryEngineError):
    def __init__(self, segment_id: str, cause: Exception):
        super().__init__(f"segment {segment_id}: {cause}")
        self.segment_id = segment_id
        self.cause = cause


class SummaryEmpty(MemoryEngineError):
    pass


# store

class StoreError(MemoryEngineError):
    pass


class BadMagic(StoreError):
    pass


class VersionMismatch(StoreError):
    pass


class CorruptManifest(StoreError):
    pass


class SerializationError(StoreError):
    pass


# retrieval / harness

class NoEvidence(MemoryEngineError):
    pass


class RetrievalError(MemoryEngineError):
    """Backend failure during retrieval, carrying whatever evidence was gathered."""

    def __init__(self, stage: str, cause: Exception, evidence=None):
        super().__init__(f"retrieval failed during {stage}: {cause}")
        self.stage = stage
        self.cause = cause
        self.evidence = list(evidence or [])


class StageError(MemoryEngineError):
    """Ingest failure tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(MemoryEngineError, ValueError):
    pass


class EmptyQuestionSet(PreconditionError):
    pass
