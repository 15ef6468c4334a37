"""Engine configuration (TOML or JSON) and backend construction."""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import DEFAULT_DIM, BackendSuite, Scenario, http_suite, stub_suite
from .consolidation import SCOPES
from .encoding import default_workers
from .errors import ConfigError, PreconditionError
from .media import MAX_FPS, MIN_FPS
from .retrieval import RetrievalConfig
from .segmentation import SegmentationConfig


@dataclass
class EngineConfig:
    # segmentation
    tau_v: float = 0.65
    tau_a: float = 40.0
    t_min_s: float = 5.0
    t_max_s: float = 10.0
    audio_window_s: float = 0.1
    fps: float = 2.0
    # encoding / consolidation
    keyframe_threshold: float = 0.3
    gamma: float = 0.85
    consolidation_scope: str = "all"
    dim: int = DEFAULT_DIM
    workers: int = field(default_factory=default_workers)
    # retrieval
    tau: float = 0.75
    k: int = 5
    delta_s: float = 2.0
    fallback_sim: float = 0.4
    summary_top_n: int = 20
    # backends
    backend: str = "stub"  # "stub" or "http"
    scenario: Optional[str] = None
    endpoints: Dict[str, str] = field(default_factory=dict)
    timeout_s: float = 60.0
    retries: int = 1

    def __post_init__(self):
        try:
            self.segmentation()
            self.retrieval()
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from exc
        if not MIN_FPS <= self.fps <= MAX_FPS:
            raise ConfigError(f"fps must lie in [{MIN_FPS:g}, {MAX_FPS:g}]")
        if not 0 <= self.keyframe_threshold <= 1:
            raise ConfigError("keyframe_threshold must lie in [0, 1]")
        if not 0 < self.gamma:
            raise ConfigError("gamma must be positive")
        if self.consolidation_scope not in SCOPES:
            raise ConfigError(f"consolidation_scope must be one of {SCOPES}")
        if self.dim < 1 or self.workers < 1 or self.retries < 0 or self.timeout_s <= 0:
            raise ConfigError("dim and workers must be >= 1, retries >= 0, timeout_s > 0")
        if self.backend not in ("stub", "http"):
            raise ConfigError("backend must be 'stub' or 'http'")

    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(self.tau_v, self.tau_a, self.t_min_s, self.t_max_s, self.audio_window_s)

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(tau=self.tau, k=self.k, delta_s=self.delta_s,
                               fallback_sim=self.fallback_sim, summary_top_n=self.summary_top_n)

    def snapshot(self) -> Dict[str, Any]:
        """Settings that shape stored memories; runtime-only keys are left out so
        the same store bytes come out regardless of worker count or endpoints."""
        skip = {"workers", "endpoints", "timeout_s", "retries", "scenario", "backend"}
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if data.get("scenario") and base_dir is not None:
            data["scenario"] = str((base_dir / data["scenario"]).resolve())
        return cls(**data)

    @classmethod
    def load(cls, path) -> "EngineConfig":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            if path.suffix.lower() == ".toml":
                data = tomllib.loads(raw.decode("utf-8"))
            else:
                data = json.loads(raw)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def build_suite(self) -> BackendSuite:
        if self.backend == "http":
            return http_suite(self.endpoints, self.dim, self.timeout_s, self.retries)
        scenario = Scenario.load(self.scenario) if self.scenario else Scenario()
        return stub_suite(scenario, self.dim)
