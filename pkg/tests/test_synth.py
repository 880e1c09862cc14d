"""Generator contracts: determinism, directional statistics, augmentations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dip.synth import (
    FAKE,
    REAL,
    Clip,
    SynthConfig,
    SynthError,
    direction_discontinuity,
    make_dataset,
    make_triplet,
    read_dataset,
    sample_clips,
    spatial_augment,
    synth_video_pair,
    temporal_augment,
    write_dataset,
)

CFG = SynthConfig()


def test_same_seed_bit_identical():
    a_real, a_fake = synth_video_pair(CFG, 7)
    b_real, b_fake = synth_video_pair(CFG, 7)
    assert np.array_equal(a_real, b_real) and np.array_equal(a_fake, b_fake)
    c_real, _ = synth_video_pair(CFG, 8)
    assert not np.array_equal(a_real, c_real)


def test_zero_jitter_degenerates_to_real():
    cfg = SynthConfig(fake_jitter_strength=0.0)
    real, fake = synth_video_pair(cfg, 3)
    assert np.array_equal(real, fake)


def test_pair_differs_only_inside_region():
    real, fake = synth_video_pair(CFG, 1)
    r0, c0, rows, cols = CFG.fake_region
    outside = np.ones((CFG.M, CFG.M), dtype=bool)
    outside[r0 : r0 + rows, c0 : c0 + cols] = False
    assert np.array_equal(real[:, outside], fake[:, outside])
    assert np.array_equal(real[0], fake[0])  # first frames fully identical
    assert not np.array_equal(real, fake)


def test_values_in_unit_range_and_shape():
    real, fake = synth_video_pair(CFG, 2)
    for video in (real, fake):
        assert video.shape == (CFG.video_frames, CFG.M, CFG.M, 3)
        assert video.min() >= 0.0 and video.max() <= 1.0


def test_region_bounds_checked():
    with pytest.raises(SynthError):
        SynthConfig(fake_region=(20, 20, 16, 16)).validate()


@pytest.mark.parametrize("bias,jit_axis,calm_axis", [("horizontal", 1, 0), ("vertical", 0, 1)])
def test_directional_statistic_tracks_bias(bias, jit_axis, calm_axis):
    cfg = SynthConfig(direction_bias=bias, fake_jitter_strength=3.0, video_frames=24)
    jit_ratios, calm_ratios = [], []
    for seed in range(12):
        real, fake = synth_video_pair(cfg, seed)
        s_real = direction_discontinuity(real, cfg.fake_region)
        s_fake = direction_discontinuity(fake, cfg.fake_region)
        jit_ratios.append(s_fake[jit_axis] / s_real[jit_axis])
        calm_ratios.append(s_fake[calm_axis] / s_real[calm_axis])
    assert np.median(jit_ratios) > 5.0, f"jittered axis not separated: {jit_ratios}"
    assert np.median(calm_ratios) < np.median(jit_ratios) / 5.0


def test_statistic_strictly_separates_populations():
    # jitter at 2x the motion amplitude must separate real from fake
    cfg = SynthConfig(direction_bias="both", motion_amplitude=1.0, fake_jitter_strength=2.0)
    real_stats, fake_stats = [], []
    for seed in range(20):
        real, fake = synth_video_pair(cfg, seed)
        real_stats.append(direction_discontinuity(real, cfg.fake_region).sum())
        fake_stats.append(direction_discontinuity(fake, cfg.fake_region).sum())
    assert max(real_stats) < min(fake_stats)


# ------------------------------------------------------------------ clip sampling


def test_whole_video_single_clip():
    video = np.random.default_rng(0).random((4, 8, 8, 3))
    clips = sample_clips(video, 1, 4, np.random.default_rng(1))
    assert np.array_equal(clips[0].frames, video)
    assert clips[0].clip_index == 0


def test_paper_scale_clip_counts():
    video = np.random.default_rng(0).random((64, 8, 8, 3))
    clips = sample_clips(video, 8, 16, np.random.default_rng(2))
    assert len(clips) == 8
    assert all(c.frames.shape == (16, 8, 8, 3) for c in clips)
    starts = [c.clip_index for c in clips]
    assert len(set(starts)) == 8  # without replacement when possible


def test_oversampling_falls_back_to_replacement():
    video = np.random.default_rng(0).random((5, 4, 4, 3))
    clips = sample_clips(video, 10, 4, np.random.default_rng(3))
    assert len(clips) == 10


def test_short_video_rejected():
    with pytest.raises(SynthError):
        sample_clips(np.zeros((3, 4, 4, 3)), 1, 4, np.random.default_rng(0))


# ------------------------------------------------------------------ augmentation


def raw_clip(seed=0, t=6, m=16, constant=None):
    if constant is not None:
        frames = np.full((t, m, m, 3), constant)
    else:
        frames = np.random.default_rng(seed).random((t, m, m, 3))
    return Clip(frames=frames, label=REAL, source_id=0, clip_index=0)


def test_spatial_augment_identity_when_disabled():
    clip = raw_clip()
    out = spatial_augment(clip, np.random.default_rng(0), 0.0, 0.0, 0.0)
    assert np.array_equal(out.frames, clip.frames)
    assert out.label == clip.label


def test_spatial_augment_deterministic():
    clip = raw_clip(1)
    a = spatial_augment(clip, np.random.default_rng(5))
    b = spatial_augment(clip, np.random.default_rng(5))
    assert np.array_equal(a.frames, b.frames)


def test_noise_statistics_on_constant_clip():
    clip = raw_clip(constant=0.5)
    out = spatial_augment(clip, np.random.default_rng(11), p_blur=0.0, p_noise=1.0, p_saturation=0.0)
    delta = out.frames - clip.frames
    sigma = np.std(delta)
    assert 0.01 * 0.8 <= sigma <= 0.05 * 1.2
    assert np.abs(delta).max() <= 0.5  # clamp bound from a 0.5-valued clip


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augmentations_preserve_shape_and_range(seed):
    rng = np.random.default_rng(seed)
    clip = raw_clip(seed % 100, t=5, m=8)
    out = spatial_augment(temporal_augment(clip, rng), rng)
    assert out.frames.shape == clip.frames.shape
    assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0
    assert out.label == clip.label


def test_temporal_augment_identity_when_disabled():
    clip = raw_clip(2)
    out = temporal_augment(clip, np.random.default_rng(0), 0.0, 0.0)
    assert np.array_equal(out.frames, clip.frames)


def test_temporal_augment_repeats_predecessor():
    clip = raw_clip(3)
    out = temporal_augment(clip, np.random.default_rng(9), p_drop=1.0, p_repeat=0.0)
    t = clip.frames.shape[0]
    repeated = [
        i for i in range(1, t) if np.array_equal(out.frames[i], out.frames[i - 1])
    ]
    assert repeated, "dropping must leave at least one repeated slot"
    changed = [i for i in range(t) if not np.array_equal(out.frames[i], clip.frames[i])]
    assert changed and all(0 < i < t - 1 for i in changed)  # interior only


def test_temporal_augment_rejects_tiny_clips():
    with pytest.raises(SynthError):
        temporal_augment(raw_clip(t=2), np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_temporal_augment_length_always_preserved(seed):
    clip = raw_clip(seed % 17, t=5, m=8)
    out = temporal_augment(clip, np.random.default_rng(seed))
    assert out.frames.shape[0] == clip.frames.shape[0]


# ---------------------------------------------------------------------- triplets


def test_triplet_structure_and_determinism():
    pairs = make_dataset(CFG, 1)
    batch = make_triplet(pairs[0], CFG, 0)
    assert batch.anchor.label == REAL and batch.negative.label == FAKE
    assert batch.anchor.source_id == batch.positive.source_id
    assert batch.negative.source_id == batch.anchor.source_id + 1
    labels = [label for _, label in batch.classification]
    assert REAL in labels and FAKE in labels
    # anchor is an unaugmented window of the real video
    start = batch.anchor.clip_index
    assert np.array_equal(batch.anchor.frames, pairs[0].real[start : start + CFG.T])
    again = make_triplet(pairs[0], CFG, 0)
    assert np.array_equal(again.positive.frames, batch.positive.frames)
    assert np.array_equal(again.negative.frames, batch.negative.frames)


def test_triplet_respects_batch_size():
    pairs = make_dataset(CFG, 1)
    batch = make_triplet(pairs[0], CFG, 1, batch_size=6)
    assert len(batch.classification) == 6


# ---------------------------------------------------------------------- dataset io


def test_dataset_round_trip(tmp_path):
    pairs = make_dataset(CFG, 3)
    write_dataset(tmp_path / "data", CFG, pairs)
    manifest, loaded = read_dataset(tmp_path / "data")
    assert len(manifest["videos"]) == 6
    assert manifest["config"]["M"] == CFG.M
    for original, round_tripped in zip(pairs, loaded):
        assert np.array_equal(original.real, round_tripped.real)
        assert np.array_equal(original.fake, round_tripped.fake)
