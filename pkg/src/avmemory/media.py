"""Pre-decoded media input: PNM frames, 16 kHz PCM WAV audio and bundle manifests.

A bundle directory looks like::

    bundle.json      {"duration_s": 60.0,
                      "frames": [{"timestamp_s": 0.0, "path": "frames/0000.pgm"}, ...],
                      "audio": "audio.wav"}
    frames/*.pgm|ppm
    audio.wav

Container decoding (mp4, mkv, ...) is left to external tools such as ffmpeg.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    BundleNotFound,
    EmptyBundle,
    InvalidBundle,
    InvalidFps,
    MalformedPnm,
    MalformedWav,
    UnsupportedFormat,
    UnsupportedMaxval,
)

SAMPLE_RATE_HZ = 16000
MIN_FPS = 1.0
MAX_FPS = 10.0


@dataclass(frozen=True, eq=False)
class Frame:
    """One grayscale frame. ``luma`` has shape (height, width), dtype uint8."""

    timestamp_s: float
    luma: np.ndarray
    source: Optional[str] = None  # bundle-relative path, used as the describer key

    def __post_init__(self):
        luma = np.ascontiguousarray(self.luma, dtype=np.uint8)
        if luma.ndim != 2 or luma.size == 0:
            raise ValueError("luma must be a non-empty 2-D array")
        if not np.isfinite(self.timestamp_s) or self.timestamp_s < 0:
            raise ValueError(f"bad timestamp {self.timestamp_s}")
        luma.setflags(write=False)
        object.__setattr__(self, "luma", luma)

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    def same_as(self, other: "Frame") -> bool:
        return (
            self.timestamp_s == other.timestamp_s
            and self.luma.shape == other.luma.shape
            and bool(np.array_equal(self.luma, other.luma))
        )


@dataclass(frozen=True, eq=False)
class AudioTrack:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be 1-D")
        if not np.all(np.isfinite(samples)) or np.any(np.abs(samples) > 1.0):
            raise ValueError("samples must be finite and within [-1, 1]")
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise UnsupportedFormat(f"sample rate must be {SAMPLE_RATE_HZ} Hz")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def slice(self, start_s: float, end_s: float) -> np.ndarray:
        lo = max(0, int(round(start_s * self.sample_rate_hz)))
        hi = min(len(self.samples), int(round(end_s * self.sample_rate_hz)))
        return self.samples[lo:max(lo, hi)]


@dataclass(frozen=True, eq=False)
class MediaBundle:
    frames: List[Frame]
    audio: AudioTrack
    duration_s: float
    root: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        frames = list(self.frames)
        object.__setattr__(self, "frames", frames)
        ts = [f.timestamp_s for f in frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidBundle("frame timestamps must be strictly increasing")
        if frames and self.duration_s < ts[-1]:
            raise InvalidBundle("duration_s is shorter than the last frame timestamp")
        period = native_frame_period(ts)
        if abs(self.duration_s - self.audio.duration_s) > period + 1e-9:
            raise InvalidBundle(
                f"audio length {self.audio.duration_s:.3f}s disagrees with "
                f"duration_s {self.duration_s:.3f}s by more than one frame period"
            )


def native_frame_period(timestamps: Sequence[float]) -> float:
    if len(timestamps) < 2:
        return 1.0
    return (timestamps[-1] - timestamps[0]) / (len(timestamps) - 1)


# --------------------------------------------------------------------------- WAV

def parse_wav(data: bytes) -> AudioTrack:
    """Decode a 16-bit PCM RIFF/WAVE file at 16 kHz, downmixing to mono.

    Samples are normalised as ``s / 32768``; multi-channel frames are averaged.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav("missing RIFF/WAVE magic")
    (riff_size,) = struct.unpack_from("<I", data, 4)
    if riff_size + 8 > len(data):
        raise MalformedWav("RIFF size exceeds file length")
    end = riff_size + 8

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= end:
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > end:
            raise MalformedWav(f"chunk {chunk_id!r} overruns the file")
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedWav("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            pcm = data[body:body + size]
        pos = body + size + (size & 1)
    if pos != end and pos != end + 1:
        raise MalformedWav("trailing bytes inside RIFF container")
    if fmt is None:
        raise MalformedWav("no fmt chunk")
    if pcm is None:
        raise MalformedWav("no data chunk")

    format_code, channels, rate, _byte_rate, block_align, bits = fmt
    if format_code != 1:
        raise UnsupportedFormat(f"format code {format_code} is not PCM")
    if bits != 16:
        raise UnsupportedFormat(f"{bits}-bit samples are not supported")
    if rate != SAMPLE_RATE_HZ:
        raise UnsupportedFormat(f"sample rate {rate} Hz, expected {SAMPLE_RATE_HZ}")
    if channels < 1 or block_align != 2 * channels:
        raise MalformedWav("inconsistent channel count / block alignment")
    if len(pcm) % block_align:
        raise MalformedWav("data chunk is not a whole number of frames")

    ints = np.frombuffer(pcm, dtype="<i2").astype(np.float64).reshape(-1, channels)
    samples = (ints / 32768.0).mean(axis=1) if channels > 1 else ints[:, 0] / 32768.0
    return AudioTrack(samples)


def wav_bytes(samples: np.ndarray, sample_rate_hz: int = SAMPLE_RATE_HZ) -> bytes:
    """Encode mono float samples as 16-bit PCM (inverse of :func:`parse_wav`)."""
    ints = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    pcm = ints.astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate_hz, sample_rate_hz * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


# --------------------------------------------------------------------------- PNM

_PNM_HEADER = re.compile(
    rb"\A(P[56])(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s"
)


def parse_pnm(data: bytes, timestamp_s: float = 0.0, source: Optional[str] = None) -> Frame:
    """Decode binary PGM (P5) or PPM (P6) with maxval 255 into a luma frame.

    Colour input is converted with BT.601 weights, rounded half up.
    """
    m = _PNM_HEADER.match(data)
    if m is None:
        raise MalformedPnm("not a binary P5/P6 header")
    magic = m.group(1)
    width, height, maxval = (int(m.group(i)) for i in (2, 3, 4))
    if width <= 0 or height <= 0:
        raise MalformedPnm("zero image dimension")
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval}, only 255 is supported")
    channels = 1 if magic == b"P5" else 3
    raster = data[m.end():]
    if len(raster) != width * height * channels:
        raise MalformedPnm(
            f"raster has {len(raster)} bytes, header implies {width * height * channels}"
        )
    px = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        luma = px.reshape(height, width)
    else:
        rgb = px.reshape(height, width, 3).astype(np.int64)
        y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
        luma = y.astype(np.uint8)
    return Frame(timestamp_s, luma, source)


def pgm_bytes(luma: np.ndarray) -> bytes:
    luma = np.asarray(luma, dtype=np.uint8)
    h, w = luma.shape
    return b"P5\n%d %d\n255\n" % (w, h) + luma.tobytes()


def ppm_bytes(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()


# --------------------------------------------------------------------------- sampling

def sample_frames(bundle_or_frames, fps: float) -> List[Frame]:
    """Pick the frame nearest to each grid point ``n / fps`` up to the last timestamp.

    Duplicate picks collapse; ties go to the earlier frame.
    """
    frames = bundle_or_frames.frames if isinstance(bundle_or_frames, MediaBundle) else list(bundle_or_frames)
    if not MIN_FPS <= fps <= MAX_FPS:
        raise InvalidFps(f"fps must lie in [{MIN_FPS:g}, {MAX_FPS:g}], got {fps}")
    if not frames:
        raise EmptyBundle("bundle has no frames")
    ts = np.array([f.timestamp_s for f in frames])
    n_points = int(np.floor(ts[-1] * fps + 1e-9)) + 1
    grid = np.arange(n_points) / fps
    right = np.clip(np.searchsorted(ts, grid, side="left"), 0, len(ts) - 1)
    left = np.clip(right - 1, 0, len(ts) - 1)
    pick = np.where(np.abs(ts[left] - grid) <= np.abs(ts[right] - grid), left, right)
    return [frames[i] for i in sorted(set(pick.tolist()))]


# --------------------------------------------------------------------------- bundles

def load_bundle(path) -> MediaBundle:
    root = Path(path)
    manifest_path = root / "bundle.json"
    if not manifest_path.is_file():
        raise BundleNotFound(f"{manifest_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        duration = float(manifest["duration_s"])
        entries = manifest["frames"]
        audio_rel = manifest["audio"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidBundle(f"bad bundle.json: {exc}") from exc

    frames = []
    for entry in entries:
        rel = entry["path"]
        frames.append(parse_pnm((root / rel).read_bytes(), float(entry["timestamp_s"]), rel))
    audio = parse_wav((root / audio_rel).read_bytes())
    return MediaBundle(frames, audio, duration, root)


def write_bundle(path, frames: Sequence[Frame], audio: AudioTrack, duration_s: float) -> Path:
    """Write frames (as PGM) and audio into a bundle directory; returns the directory."""
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, frame in enumerate(frames):
        rel = f"frames/{i:05d}.pgm"
        (root / rel).write_bytes(pgm_bytes(frame.luma))
        entries.append({"timestamp_s": frame.timestamp_s, "path": rel})
    (root / "audio.wav").write_bytes(wav_bytes(audio.samples))
    manifest = {"duration_s": duration_s, "frames": entries, "audio": "audio.wav"}
    (root / "bundle.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return root
