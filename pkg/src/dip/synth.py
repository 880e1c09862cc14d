"""Procedural real/fake video pairs with controllable directional jitter.

A real video is a smooth band-limited texture translating with low-pass
filtered velocity.  Its fake counterpart is identical except inside a
configured region, where each frame (after the first) receives an extra
independent displacement drawn along the biased axis.  Second differences
of the region's intensity centroid expose the jitter axis, which makes
the detection task well-posed by construction.

Augmentations mirror common video-forensics training pipelines: Gaussian
blur, additive noise, saturation scaling, and frame dropping/repeating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_arrays, save_arrays

REAL, FAKE = 0, 1
LABEL_NAMES = {REAL: "real", FAKE: "fake"}


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    T: int = 4
    M: int = 32
    P: int = 8
    video_frames: int = 12
    motion_amplitude: float = 1.0
    fake_jitter_strength: float = 3.0
    fake_region: tuple[int, int, int, int] = (8, 8, 16, 16)  # row0, col0, rows, cols
    direction_bias: str = "both"  # horizontal | vertical | both
    seed: int = 0

    def validate(self) -> None:
        if self.T < 2:
            raise SynthError("T: clips need at least 2 frames")
        if self.M % self.P != 0:
            raise SynthError(f"M: {self.M} not divisible by patch size {self.P}")
        if self.video_frames < self.T:
            raise SynthError("video_frames: source videos must be at least one clip long")
        r0, c0, rows, cols = self.fake_region
        if min(r0, c0, rows, cols) < 0 or rows == 0 or cols == 0:
            raise SynthError("fake_region: degenerate region")
        if r0 + rows > self.M or c0 + cols > self.M:
            raise SynthError(
                f"fake_region: ({r0},{c0},{rows},{cols}) exceeds {self.M}x{self.M} frame"
            )
        if self.direction_bias not in ("horizontal", "vertical", "both"):
            raise SynthError(f"direction_bias: unknown value {self.direction_bias!r}")
        if self.fake_jitter_strength < 0:
            raise SynthError("fake_jitter_strength: must be nonnegative")


@dataclass
class Clip:
    frames: np.ndarray  # (T, M, M, 3) in [0, 1]
    label: int
    source_id: int
    clip_index: int


@dataclass
class VideoPair:
    pair_id: int
    real: np.ndarray  # (F, M, M, 3)
    fake: np.ndarray


@dataclass
class TripletBatch:
    anchor: Clip
    positive: Clip
    negative: Clip
    classification: list[tuple[Clip, int]] = field(default_factory=list)


# ----------------------------------------------------------------- generation


class _Texture:
    """Separable band-limited periodic RGB texture: wave(x) + wave(y).

    Even spatial frequencies make every axis-aligned window of half the
    frame width span whole periods, so a pure x-shift leaves row sums (and
    hence the row centroid) unchanged: the per-axis displacement statistic
    stays decoupled.  Amplitudes keep values inside [0, 1] without clamping.
    """

    def __init__(self, m: int, rng: np.random.Generator, waves: int = 3):
        self.m = m
        # wave 0 is a pinned fundamental: every texture keeps a uniform
        # centroid response to sub-pixel shifts regardless of the draw
        self.freq = rng.choice([4, 6], size=(3, 2, waves))  # [channel, axis, wave]
        self.freq[:, :, 0] = 2
        self.phase = rng.uniform(0.0, 2.0 * math.pi, size=(3, 2, waves))
        # share the fundamental's phase across channels so the luminance
        # response never cancels between channels
        self.phase[:, :, 0] = rng.uniform(0.0, 2.0 * math.pi, size=2)[None, :]
        amp = rng.uniform(0.5, 1.0, size=(3, 2, waves))
        amp[:, :, 0] = 1.5
        self.amp = 0.22 * amp / amp.sum(axis=2, keepdims=True)

    def _profile(self, channel: int, axis: int, offset: float) -> np.ndarray:
        coords = (np.arange(self.m) + offset) / self.m
        acc = np.zeros(self.m)
        for k in range(self.freq.shape[2]):
            acc += self.amp[channel, axis, k] * np.cos(
                2.0 * math.pi * self.freq[channel, axis, k] * coords
                + self.phase[channel, axis, k]
            )
        return acc

    def sample(self, dy: float, dx: float) -> np.ndarray:
        out = np.empty((self.m, self.m, 3))
        for c in range(3):
            fy = self._profile(c, 0, dy)
            fx = self._profile(c, 1, dx)
            out[:, :, c] = 0.5 + fy[:, None] + fx[None, :]
        return np.clip(out, 0.0, 1.0)


def _smooth_offsets(frames: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """(F, 2) cumulative displacement from a two-harmonic sinusoidal drift.

    Per-frame velocity RMS equals `amplitude` per axis while the
    acceleration stays bounded by the long period, keeping the real
    video's temporal second differences far below fake jitter.
    """
    period = 4.0 * frames
    t = np.arange(frames)
    out = np.zeros((frames, 2))
    for axis in range(2):
        for k in (1, 2):
            amp_k = rng.uniform(0.5, 1.0) / k
            phase = rng.uniform(0.0, 2.0 * math.pi)
            out[:, axis] += amp_k * np.sin(2.0 * math.pi * k * t / period + phase)
    v = np.diff(out, axis=0)
    rms = np.sqrt((v**2).mean(axis=0))
    return out * (amplitude / np.maximum(rms, 1e-12))


def synth_video_pair(cfg: SynthConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One (real, fake) video pair; identical outside the fake region.

    The fake's region is resampled with extra per-frame jitter along the
    biased axis from frame 1 on; jitter strength 0 degenerates to an exact
    copy.  Deterministic in (cfg, seed).
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, seed])
    texture = _Texture(cfg.M, rng)
    offsets = _smooth_offsets(cfg.video_frames, cfg.motion_amplitude, rng)

    s = cfg.fake_jitter_strength
    jitter = rng.uniform(-s, s, size=(cfg.video_frames, 2))
    jitter[0] = 0.0
    if cfg.direction_bias == "horizontal":
        jitter[:, 0] = 0.0  # jitter columns only
    elif cfg.direction_bias == "vertical":
        jitter[:, 1] = 0.0  # jitter rows only

    r0, c0, rows, cols = cfg.fake_region
    real = np.empty((cfg.video_frames, cfg.M, cfg.M, 3))
    fake = np.empty_like(real)
    for t in range(cfg.video_frames):
        dy, dx = offsets[t]
        frame = texture.sample(dy, dx)
        real[t] = frame
        fake[t] = frame
        jy, jx = jitter[t]
        if jy != 0.0 or jx != 0.0:
            shifted = texture.sample(dy + jy, dx + jx)
            fake[t, r0 : r0 + rows, c0 : c0 + cols] = shifted[
                r0 : r0 + rows, c0 : c0 + cols
            ]
    return real, fake


def region_centroid_series(frames: np.ndarray, region: tuple[int, int, int, int]) -> np.ndarray:
    """(F, 2) intensity-weighted centroid (row, col) of the region per frame."""
    r0, c0, rows, cols = region
    patch = frames[:, r0 : r0 + rows, c0 : c0 + cols].mean(axis=-1)
    weight = patch.sum(axis=(1, 2))
    ys = np.arange(rows)[None, :, None]
    xs = np.arange(cols)[None, None, :]
    cy = (patch * ys).sum(axis=(1, 2)) / weight
    cx = (patch * xs).sum(axis=(1, 2)) / weight
    return np.stack([cy, cx], axis=1)


def direction_discontinuity(frames: np.ndarray, region: tuple[int, int, int, int]) -> np.ndarray:
    """Per-axis mean squared temporal second difference of the region centroid.

    Axis order (vertical, horizontal) matching (row, col) displacement.
    """
    c = region_centroid_series(frames, region)
    second = c[2:] - 2.0 * c[1:-1] + c[:-2]
    return (second**2).mean(axis=0)


# -------------------------------------------------------------------- sampling


def sample_clips(
    video: np.ndarray, n_clips: int, t: int, rng, label: int = REAL, source_id: int = 0
) -> list[Clip]:
    """Windows of `t` consecutive frames; offsets without replacement when possible."""
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    frames = video.shape[0]
    if frames < t:
        raise SynthError(f"video of {frames} frames is shorter than a {t}-frame clip")
    max_start = frames - t + 1
    if n_clips <= max_start:
        starts = rng.choice(max_start, size=n_clips, replace=False)
    else:
        starts = rng.choice(max_start, size=n_clips, replace=True)
    return [
        Clip(
            frames=video[s : s + t].copy(),
            label=label,
            source_id=source_id,
            clip_index=int(s),
        )
        for s in map(int, starts)
    ]


# ---------------------------------------------------------------- augmentation


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _blur_axis(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * data.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(data, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


def gaussian_blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    kernel = _gaussian_kernel(sigma)
    return _blur_axis(_blur_axis(frames, kernel, 1), kernel, 2)


def spatial_augment(
    clip: Clip,
    rng,
    p_blur: float = 0.5,
    p_noise: float = 0.5,
    p_saturation: float = 0.5,
) -> Clip:
    """Random subset of blur / noise / saturation scaling; shape and label kept."""
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    frames = clip.frames
    # draw all decisions up front so the consumed randomness is independent
    # of which branches fire
    do_blur = rng.random() < p_blur
    sigma_blur = rng.uniform(0.5, 2.0)
    do_noise = rng.random() < p_noise
    sigma_noise = rng.uniform(0.01, 0.05)
    do_sat = rng.random() < p_saturation
    sat = rng.uniform(0.7, 1.3)
    if do_blur:
        frames = gaussian_blur(frames, sigma_blur)
    if do_noise:
        frames = frames + rng.normal(0.0, sigma_noise, size=frames.shape)
    if do_sat:
        lum = frames.mean(axis=-1, keepdims=True)
        frames = lum + sat * (frames - lum)
    if frames is not clip.frames:
        frames = np.clip(frames, 0.0, 1.0)
    return Clip(frames=frames, label=clip.label, source_id=clip.source_id, clip_index=clip.clip_index)


def _repeat_previous(frames: np.ndarray, indices) -> np.ndarray:
    out = frames.copy()
    for i in sorted(int(i) for i in indices):
        out[i] = out[i - 1]
    return out


def temporal_augment(clip: Clip, rng, p_drop: float = 0.5, p_repeat: float = 0.5) -> Clip:
    """Frame dropping (interior, backfilled by the predecessor) and repeating.

    Length is always preserved; requires at least 3 frames.
    """
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    t = clip.frames.shape[0]
    if t < 3:
        raise SynthError("temporal augmentation needs clips of at least 3 frames")
    frames = clip.frames
    do_drop = rng.random() < p_drop
    k_drop = int(rng.integers(1, 3))
    drop_at = rng.choice(np.arange(1, t - 1), size=min(k_drop, t - 2), replace=False)
    do_repeat = rng.random() < p_repeat
    k_rep = int(rng.integers(1, 3))
    repeat_at = rng.choice(np.arange(1, t), size=min(k_rep, t - 1), replace=False)
    if do_drop:
        frames = _repeat_previous(frames, drop_at)
    if do_repeat:
        frames = _repeat_previous(frames, repeat_at)
    return Clip(frames=frames, label=clip.label, source_id=clip.source_id, clip_index=clip.clip_index)


def augment(clip: Clip, rng) -> Clip:
    return spatial_augment(temporal_augment(clip, rng), rng)


# -------------------------------------------------------------------- triplets


def make_triplet(
    pair: VideoPair, cfg: SynthConfig, seed: int, batch_size: int = 4
) -> TripletBatch:
    """Anchor (raw, real) / positive (augmented, same video) / negative (augmented fake).

    The classification minibatch mixes the raw anchor with augmented real
    and fake clips from the same pair, at least one of each class.
    """
    rng = np.random.default_rng([cfg.seed, 1, seed])
    real_id = 2 * pair.pair_id
    fake_id = 2 * pair.pair_id + 1
    anchor, pos_src = sample_clips(pair.real, 2, cfg.T, rng, REAL, real_id)
    positive = augment(pos_src, rng)
    neg_src = sample_clips(pair.fake, 1, cfg.T, rng, FAKE, fake_id)[0]
    negative = augment(neg_src, rng)

    classification: list[tuple[Clip, int]] = [(anchor, REAL), (negative, FAKE)]
    while len(classification) < batch_size:
        real_extra = augment(sample_clips(pair.real, 1, cfg.T, rng, REAL, real_id)[0], rng)
        classification.append((real_extra, REAL))
        if len(classification) >= batch_size:
            break
        fake_extra = augment(sample_clips(pair.fake, 1, cfg.T, rng, FAKE, fake_id)[0], rng)
        classification.append((fake_extra, FAKE))
    return TripletBatch(
        anchor=anchor, positive=positive, negative=negative, classification=classification
    )


# ------------------------------------------------------------------- datasets


def make_dataset(cfg: SynthConfig, n_pairs: int, seed_offset: int = 0) -> list[VideoPair]:
    pairs = []
    for i in range(n_pairs):
        real, fake = synth_video_pair(cfg, seed_offset + i)
        pairs.append(VideoPair(pair_id=i, real=real, fake=fake))
    return pairs


def write_dataset(directory, cfg: SynthConfig, pairs: list[VideoPair]) -> None:
    """manifest.json plus one tensor container per video."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in pairs:
        for label, frames in ((REAL, pair.real), (FAKE, pair.fake)):
            vid = 2 * pair.pair_id + label
            fname = f"video_{vid:04d}.dip"
            save_arrays(directory / fname, {"frames": frames})
            entries.append(
                {
                    "id": vid,
                    "label": LABEL_NAMES[label],
                    "pair": pair.pair_id,
                    "file": fname,
                }
            )
    manifest = {
        "format": "dip-synth v1",
        "config": {
            "T": cfg.T,
            "M": cfg.M,
            "P": cfg.P,
            "video_frames": cfg.video_frames,
            "motion_amplitude": cfg.motion_amplitude,
            "fake_jitter_strength": cfg.fake_jitter_strength,
            "fake_region": list(cfg.fake_region),
            "direction_bias": cfg.direction_bias,
            "seed": cfg.seed,
        },
        "videos": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_dataset(directory) -> tuple[dict, list[VideoPair]]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    by_pair: dict[int, dict[str, np.ndarray]] = {}
    for entry in manifest["videos"]:
        frames = load_arrays(directory / entry["file"])["frames"]
        by_pair.setdefault(entry["pair"], {})[entry["label"]] = frames
    pairs = []
    for pair_id in sorted(by_pair):
        videos = by_pair[pair_id]
        if set(videos) != {"real", "fake"}:
            raise SynthError(f"pair {pair_id}: manifest does not list both labels")
        pairs.append(VideoPair(pair_id=pair_id, real=videos["real"], fake=videos["fake"]))
    return manifest, pairs
