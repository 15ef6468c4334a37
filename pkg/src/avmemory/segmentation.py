"""Perceptual boundary detection and segmentation scoring.

A boundary candidate fires when consecutive sampled frames differ structurally
(``1 - SSIM > tau_v``) or when a 100 ms audio window is quieter than ``tau_a``
dB below full scale. Candidates are then swept left to right so that every
segment lasts between ``t_min_s`` and ``t_max_s`` seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch, EmptyGroundTruth, EmptyInput, EmptyWindow, PreconditionError
from .media import AudioTrack, Frame

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
SILENCE_DB = 100.0


@dataclass(frozen=True, order=True)
class TimeInterval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise ValueError(f"invalid interval [{self.start_s}, {self.end_s}]")

    @property
    def length_s(self) -> float:
        return self.end_s - self.start_s

    def contains(self, other: "TimeInterval") -> bool:
        return self.start_s <= other.start_s and other.end_s <= self.end_s

    def overlaps(self, other: "TimeInterval") -> bool:
        # closed intervals: touching endpoints count
        return self.start_s <= other.end_s and other.start_s <= self.end_s

    def to_list(self) -> List[float]:
        return [self.start_s, self.end_s]


@dataclass(frozen=True)
class SegmentationConfig:
    tau_v: float = 0.65
    tau_a: float = 40.0
    t_min_s: float = 5.0
    t_max_s: float = 10.0
    audio_window_s: float = 0.1

    def __post_init__(self):
        if not 0 < self.tau_v < 1:
            raise PreconditionError("tau_v must lie in (0, 1)")
        if self.tau_a <= 0:
            raise PreconditionError("tau_a must be positive")
        if not 0 < self.t_min_s < self.t_max_s:
            raise PreconditionError("need 0 < t_min_s < t_max_s")
        if self.audio_window_s <= 0:
            raise PreconditionError("audio_window_s must be positive")


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter(img: np.ndarray, gy: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Separable weighted mean over every fully-contained window ('valid' mode)."""
    rows = sliding_window_view(img, len(gy), axis=0) @ gy
    return sliding_window_view(rows, len(gx), axis=1) @ gx


def ssim(a: Frame, b: Frame) -> float:
    """Mean SSIM over all 11x11 Gaussian (sigma 1.5) windows lying inside the frame.

    Frames narrower or shorter than 11 pixels use a window clipped to the frame
    size along that axis.
    """
    x, y = _as_luma(a), _as_luma(b)
    if x.shape != y.shape:
        raise DimensionMismatch(f"frame shapes differ: {x.shape} vs {y.shape}")
    gy = gaussian_window(min(SSIM_WINDOW, x.shape[0]))
    gx = gaussian_window(min(SSIM_WINDOW, x.shape[1]))

    mu_x = _filter(x, gy, gx)
    mu_y = _filter(y, gy, gx)
    xx = mu_x * mu_x
    yy = mu_y * mu_y
    xy = mu_x * mu_y
    s_xx = _filter(x * x, gy, gx) - xx
    s_yy = _filter(y * y, gy, gx) - yy
    s_xy = _filter(x * y, gy, gx) - xy

    num = (2.0 * xy + SSIM_C1) * (2.0 * s_xy + SSIM_C2)
    den = (xx + yy + SSIM_C1) * (s_xx + s_yy + SSIM_C2)
    return float(np.mean(num / den))


def visual_distance(a: Frame, b: Frame) -> float:
    return 1.0 - ssim(a, b)


def _as_luma(f) -> np.ndarray:
    arr = f.luma if isinstance(f, Frame) else f
    return np.asarray(arr, dtype=np.float64)


def audio_level_db(window: np.ndarray) -> float:
    """Negative RMS level in dB; digital silence clamps to 100 dB."""
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0:
        raise EmptyWindow("audio window is empty")
    rms = math.sqrt(float(np.mean(w * w)))
    if rms == 0.0:
        return SILENCE_DB
    return -20.0 * math.log10(rms)


def visual_candidates(frames: Sequence[Frame], tau_v: float) -> List[float]:
    return [
        cur.timestamp_s
        for prev, cur in zip(frames, frames[1:])
        if visual_distance(cur, prev) > tau_v
    ]


def audio_candidates(audio: AudioTrack, tau_a: float, window_s: float = 0.1) -> List[float]:
    """Start times of non-overlapping analysis windows whose level exceeds ``tau_a``."""
    n = max(1, int(round(window_s * audio.sample_rate_hz)))
    out = []
    for start in range(0, len(audio.samples), n):
        if audio_level_db(audio.samples[start:start + n]) > tau_a:
            out.append(start / audio.sample_rate_hz)
    return out


def boundary_candidates(frames: Sequence[Frame], audio: Optional[AudioTrack], cfg: SegmentationConfig) -> List[float]:
    times = set(visual_candidates(frames, cfg.tau_v))
    if audio is not None and len(audio.samples):
        times.update(audio_candidates(audio, cfg.tau_a, cfg.audio_window_s))
    return sorted(times)


def sweep_boundaries(candidates: Iterable[float], duration_s: float, t_min_s: float, t_max_s: float) -> List[float]:
    """Turn raw candidates into accepted boundary times (excluding 0 and duration).

    Gaps longer than ``t_max_s`` are force-split before a candidate is judged, a
    candidate closer than ``t_min_s`` to the previous boundary is dropped, and a
    final remainder shorter than ``t_min_s`` is folded into the segment before it.
    """
    bounds: List[float] = []
    last = 0.0
    for c in sorted(set(candidates)):
        if c <= 0 or c >= duration_s:
            continue
        while c - last > t_max_s:
            last = last + t_max_s
            bounds.append(last)
        if c - last >= t_min_s:
            bounds.append(c)
            last = c
    while duration_s - last > t_max_s:
        last = last + t_max_s
        bounds.append(last)
    if bounds and duration_s - last < t_min_s:
        bounds.pop()
    return bounds


def intervals_from_boundaries(bounds: Sequence[float], duration_s: float) -> List[TimeInterval]:
    edges = [0.0, *bounds, duration_s]
    return [TimeInterval(s, e) for s, e in zip(edges, edges[1:])]


def detect_boundaries(
    frames: Sequence[Frame],
    audio: Optional[AudioTrack],
    cfg: SegmentationConfig = SegmentationConfig(),
    duration_s: Optional[float] = None,
) -> List[TimeInterval]:
    """Segment ``[0, duration_s]`` into intervals that tile it exactly.

    ``duration_s`` defaults to the audio length.
    """
    if duration_s is None:
        duration_s = audio.duration_s if audio is not None else (frames[-1].timestamp_s if frames else 0.0)
    if duration_s <= 0 or (not frames and (audio is None or not len(audio.samples))):
        raise EmptyInput("nothing to segment")
    cands = boundary_candidates(frames, audio, cfg)
    bounds = sweep_boundaries(cands, duration_s, cfg.t_min_s, cfg.t_max_s)
    return intervals_from_boundaries(bounds, duration_s)


def fixed_windows(duration_s: float, window_s: float) -> List[TimeInterval]:
    """Fixed-length chunking baseline; the last chunk may be shorter."""
    if window_s <= 0 or duration_s <= 0:
        raise PreconditionError("window and duration must be positive")
    out = []
    start = 0.0
    i = 0
    while start < duration_s:
        end = min(duration_s, (i + 1) * window_s)
        out.append(TimeInterval(start, end))
        i += 1
        start = end
    return out


def event_integrity_rate(segments: Sequence[TimeInterval], gt_events: Sequence[TimeInterval]) -> float:
    """Fraction of ground-truth events fully inside at least one segment."""
    if not gt_events:
        raise EmptyGroundTruth("no ground-truth events")
    if not segments:
        raise EmptyInput("no segments")
    kept = sum(1 for ev in gt_events if any(seg.contains(ev) for seg in segments))
    return kept / len(gt_events)
