"""Synthetic audiovisual bundles for tests, demos and benchmarks.

Each *scene* is a fixed random texture, so frames inside a scene are
identical and frames across a cut are structurally unrelated. Audio is a
constant loud level with optional stretches of digital silence.
"""
from __future__ import annotations

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .media import SAMPLE_RATE_HZ, AudioTrack, Frame, MediaBundle


def scene_texture(seed: int, size: Tuple[int, int] = (32, 32)) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=size, dtype=np.uint8)


def synthetic_bundle(
    duration_s: float,
    cuts: Iterable[float] = (),
    *,
    native_fps: float = 2.0,
    silences: Sequence[Tuple[float, float]] = (),
    size: Tuple[int, int] = (32, 32),
    level: float = 0.5,
    seed: int = 0,
    scene_seeds: Optional[Sequence[int]] = None,
) -> MediaBundle:
    """Build an in-memory bundle with hard visual cuts at ``cuts``.

    ``scene_seeds`` picks the texture of each scene (len(cuts) + 1 entries);
    reusing a seed makes two scenes look identical.
    """
    cuts = sorted(cuts)
    if scene_seeds is None:
        scene_seeds = [seed * 1000 + i for i in range(len(cuts) + 1)]
    textures = [scene_texture(s, size) for s in scene_seeds]

    n_frames = int(np.floor(duration_s * native_fps + 1e-9))
    frames: List[Frame] = []
    for i in range(n_frames):
        t = round(i / native_fps, 6)
        scene = int(np.searchsorted(cuts, t, side="right"))
        frames.append(Frame(t, textures[scene], f"frames/{i:05d}.pgm"))

    n = int(round(duration_s * SAMPLE_RATE_HZ))
    samples = np.full(n, level, dtype=np.float64)
    for start, end in silences:
        samples[int(round(start * SAMPLE_RATE_HZ)):int(round(end * SAMPLE_RATE_HZ))] = 0.0
    # quantise exactly as a WAV round-trip would
    samples = np.round(samples * 32768.0) / 32768.0
    return MediaBundle(frames, AudioTrack(samples), float(duration_s))


def random_bundle(rng: np.random.Generator, duration_s: float = 60.0, **kw) -> MediaBundle:
    """Bundle with random cut positions and random silent gaps."""
    n_cuts = int(rng.integers(0, 12))
    cuts = sorted(set(np.round(rng.uniform(0.5, duration_s - 0.5, n_cuts) * 2) / 2))
    silences = []
    for _ in range(int(rng.integers(0, 4))):
        start = float(rng.uniform(0, duration_s - 1))
        silences.append((start, start + float(rng.uniform(0.2, 1.0))))
    return synthetic_bundle(duration_s, cuts, silences=silences, seed=int(rng.integers(1 << 30)), **kw)
