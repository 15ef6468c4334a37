from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avmemory.errors import DimensionMismatch, EmptyGroundTruth, EmptyInput, EmptyWindow, PreconditionError
from avmemory.media import AudioTrack, Frame
from avmemory.segmentation import (
    SSIM_C1,
    SegmentationConfig,
    TimeInterval,
    audio_level_db,
    audio_candidates,
    detect_boundaries,
    event_integrity_rate,
    fixed_windows,
    ssim,
    sweep_boundaries,
    visual_candidates,
)
from avmemory.synthetic import random_bundle, synthetic_bundle
from oracles import eir_oracle, naive_ssim, sweep_oracle


def frame(arr, t=0.0):
    return Frame(t, np.asarray(arr, dtype=np.uint8))


# --------------------------------------------------------------------------- SSIM

def test_ssim_identity_is_exactly_one():
    rng = np.random.default_rng(0)
    for shape in [(64, 64), (11, 11), (5, 30), (1, 1)]:
        f = frame(rng.integers(0, 256, shape))
        assert ssim(f, f) == 1.0


def test_ssim_constant_black_vs_white_closed_form():
    a = frame(np.zeros((16, 16)))
    b = frame(np.full((16, 16), 255))
    assert ssim(a, b) == pytest.approx(SSIM_C1 / (255 ** 2 + SSIM_C1), abs=1e-12)
    assert ssim(a, b) == pytest.approx(9.9993e-5, abs=1e-8)


@pytest.mark.parametrize("shape", [(64, 64), (20, 13), (11, 40), (7, 9)])
def test_ssim_matches_naive_reference(shape):
    rng = np.random.default_rng(hash(shape) % 1000)
    a = rng.integers(0, 256, shape)
    b = np.clip(a + rng.integers(-60, 60, shape), 0, 255)
    assert abs(ssim(frame(a), frame(b)) - naive_ssim(a, b)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24), st.integers(0, 2 ** 32 - 1))
def test_ssim_symmetric_and_bounded(h, w, seed):
    rng = np.random.default_rng(seed)
    a, b = frame(rng.integers(0, 256, (h, w))), frame(rng.integers(0, 256, (h, w)))
    s = ssim(a, b)
    assert s == ssim(b, a)
    assert -1.0 <= s <= 1.0


def test_ssim_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        ssim(frame(np.zeros((4, 4))), frame(np.zeros((4, 5))))


# --------------------------------------------------------------------------- audio level

def test_audio_level_examples():
    assert audio_level_db(np.ones(1600)) == 0.0
    assert audio_level_db(np.full(1600, 0.01)) == pytest.approx(40.0, abs=1e-9)
    assert audio_level_db(np.zeros(1600)) == 100.0
    with pytest.raises(EmptyWindow):
        audio_level_db(np.array([]))


def test_audio_candidates_fire_on_silence_only():
    samples = np.full(16000 * 3, 0.5)
    samples[16000:16000 + 3200] = 0.0  # 1.0 s .. 1.2 s
    assert audio_candidates(AudioTrack(samples), 40.0) == [1.0, 1.1]


def test_silence_triggers_boundary():
    b = synthetic_bundle(20.0, silences=[(7.0, 7.5)])
    out = detect_boundaries(b.frames, b.audio, SegmentationConfig(), b.duration_s)
    assert out == [TimeInterval(0, 7.0), TimeInterval(7.0, 20.0)]


# --------------------------------------------------------------------------- sweep

def test_sweep_static_30s_forced_splits():
    b = synthetic_bundle(30.0)
    out = detect_boundaries(b.frames, b.audio, SegmentationConfig(), 30.0)
    assert [iv.to_list() for iv in out] == [[0, 10], [10, 20], [20, 30]]


def test_sweep_single_cut_at_seven():
    b = synthetic_bundle(14.0, [7.0])
    out = detect_boundaries(b.frames, b.audio, SegmentationConfig(), 14.0)
    assert [iv.to_list() for iv in out] == [[0, 7.0], [7.0, 14.0]]


def test_sweep_suppresses_early_candidate():
    assert sweep_boundaries([2.0, 7.0], 14.0, 5, 10) == [7.0]


def test_sweep_folds_short_tail():
    # 0-10-20-23: a 3 s tail is merged into the previous segment
    assert sweep_boundaries([], 23.0, 5, 10) == [10.0]


@settings(max_examples=400, deadline=None)
@given(st.lists(st.integers(1, 799), max_size=40), st.integers(1, 800),
       st.sampled_from([(5, 10), (2, 3), (1, 7), (4, 4.5)]))
def test_sweep_matches_oracle(cands_ds, duration_ds, limits):
    t_min, t_max = limits
    cands = [c / 10 for c in cands_ds]
    duration = duration_ds / 10
    assert sweep_boundaries(cands, duration, t_min, t_max) == sweep_oracle(cands, duration, t_min, t_max)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 1199), max_size=40), st.integers(50, 1200))
def test_sweep_output_tiles_with_length_bounds(cands_ds, duration_ds):
    duration = duration_ds / 10
    bounds = sweep_boundaries([c / 10 for c in cands_ds], duration, 5, 10)
    edges = [0.0, *bounds, duration]
    lengths = [b - a for a, b in zip(edges, edges[1:])]
    eps = 1e-9  # lengths are differences of floats
    assert all(5 - eps <= length <= 10 + eps for length in lengths[:-1])
    assert lengths[-1] > 0
    # the last interval is whatever is left, at most t_max + t_min
    assert lengths[-1] < 15 or len(lengths) == 1


def test_detect_boundaries_tiles_random_bundles():
    rng = np.random.default_rng(5)
    for _ in range(10):
        b = random_bundle(rng, 45.0)
        out = detect_boundaries(b.frames, b.audio, SegmentationConfig(), b.duration_s)
        assert out[0].start_s == 0 and out[-1].end_s == b.duration_s
        assert all(x.end_s == y.start_s for x, y in zip(out, out[1:]))


def test_detect_boundaries_empty():
    with pytest.raises(EmptyInput):
        detect_boundaries([], None, SegmentationConfig(), 10.0)


def test_lower_tau_v_never_reduces_candidates():
    rng = np.random.default_rng(11)
    base = rng.integers(0, 256, (24, 24))
    frames = []
    for i in range(30):
        noise = rng.integers(-int(i * 8), int(i * 8) + 1, (24, 24))
        frames.append(frame(np.clip(base + noise, 0, 255), i * 0.5))
    counts = [len(visual_candidates(frames, tv)) for tv in np.linspace(0.95, 0.05, 19)]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


def test_config_validation():
    with pytest.raises(PreconditionError):
        SegmentationConfig(tau_v=1.5)
    with pytest.raises(PreconditionError):
        SegmentationConfig(t_min_s=10, t_max_s=5)


# --------------------------------------------------------------------------- EIR

def test_eir_examples():
    assert event_integrity_rate([TimeInterval(0, 10)], [TimeInterval(3, 6)]) == 1.0
    assert event_integrity_rate([TimeInterval(0, 10), TimeInterval(10, 20)], [TimeInterval(8, 12)]) == 0.0
    with pytest.raises(EmptyGroundTruth):
        event_integrity_rate([TimeInterval(0, 10)], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 100), st.integers(1, 30)), min_size=1, max_size=15),
       st.lists(st.tuples(st.integers(0, 100), st.integers(1, 20)), min_size=1, max_size=15))
def test_eir_matches_double_loop(segs, evs):
    segs = [(s, s + d) for s, d in segs]
    evs = [(s, s + d) for s, d in evs]
    got = event_integrity_rate([TimeInterval(*s) for s in segs], [TimeInterval(*e) for e in evs])
    assert got == eir_oracle(segs, evs)


def test_fixed_windows():
    assert [w.to_list() for w in fixed_windows(40, 15)] == [[0, 15], [15, 30], [30, 40]]


def test_interval_semantics():
    a = TimeInterval(8, 17)
    assert a.overlaps(TimeInterval(17, 20))
    assert not a.overlaps(TimeInterval(17.5, 20))
    with pytest.raises(ValueError):
        TimeInterval(3, 3)
