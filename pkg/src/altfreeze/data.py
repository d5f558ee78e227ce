"""Synthetic clip benchmark: procedural real clips plus labeled fake sets.

A "real" clip is a textured ellipse drifting smoothly over a textured
background with a slow global illumination change; everything is a closed
form of the frame index, so the same scene can be re-rendered at any
temporal offset.  Fakes come in three kinds: temporal dropout and temporal
repeat (frame-order anomalies on one source clip) and clip-level blending
of two clips under a frame-constant mask.

Held-out probe sets isolate one artifact family each.  Temporal-probe fakes
contain no spatial artifact: every nonzero frame is bitwise equal to a frame
of the regenerated source clip.  Spatial-probe fakes contain no temporal
artifact beyond their sources: each output frame depends only on the same
frame of the two sources, and the per-clip mean frame difference never
exceeds the larger source statistic.

Generator seeds are derived from (dataset seed, stream id, clip index), and
train/probe streams are disjoint by construction, as are the artifact
parameter ranges (drop/repeat counts, mask coverage).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import clip_blend, random_mask, temporal_dropout, temporal_repeat

__all__ = [
    "KIND_REAL",
    "KIND_TDROP",
    "KIND_TREPEAT",
    "KIND_BLEND",
    "KIND_NAMES",
    "DatasetSpec",
    "ClipDataset",
    "gen_real_clip",
    "clip_seed",
    "build_training_set",
    "build_validation_set",
    "build_temporal_set",
    "build_spatial_set",
    "frame_diff_stat",
]

KIND_REAL, KIND_TDROP, KIND_TREPEAT, KIND_BLEND = 0, 1, 2, 3
KIND_NAMES = {KIND_REAL: "real", KIND_TDROP: "tdrop", KIND_TREPEAT: "trepeat", KIND_BLEND: "blend"}

# Seed stream ids; train/val/probe streams never overlap.
STREAM_TRAIN_REAL = 0
STREAM_TRAIN_SRC = 1
STREAM_TRAIN_AUG = 2
STREAM_TRAIN_PARTNER = 3
STREAM_VAL_REAL = 10
STREAM_VAL_SRC = 11
STREAM_VAL_AUG = 12
STREAM_VAL_PARTNER = 13
STREAM_TPROBE_REAL = 20
STREAM_TPROBE_SRC = 21
STREAM_TPROBE_AUG = 22
STREAM_SPROBE_REAL = 30
STREAM_SPROBE_SRC = 31
STREAM_SPROBE_AUG = 32


def clip_seed(base_seed: int, stream: int, index: int) -> tuple[int, int, int]:
    """Deterministic per-clip seed; feed to numpy's default_rng."""
    return (int(base_seed), int(stream), int(index))


def seed_tag(seed: tuple[int, int, int]) -> str:
    return ":".join(str(s) for s in seed)


def parse_seed_tag(tag: str) -> tuple[int, int, int]:
    parts = tag.split(":")
    if len(parts) != 3:
        raise ValueError(f"bad seed tag {tag!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


@dataclass(frozen=True)
class DatasetSpec:
    """Counts, dimensions, seeds, and artifact parameter ranges.

    Training fakes and probe fakes must not share artifact parameters:
    the drop/repeat count sets and mask coverage intervals are validated
    to be disjoint.
    """

    clip_shape: tuple[int, int, int, int] = (3, 8, 32, 32)
    seed: int = 0
    train_real: int = 64
    train_fake: int = 64
    val_real: int = 0
    val_fake: int = 0
    probe_real: int = 24
    probe_fake: int = 24
    train_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)  # tdrop, trepeat, blend
    train_tcount: tuple[int, int] = (1, 1)
    probe_tcount: tuple[int, int] = (2, 2)
    train_coverage: tuple[float, float] = (0.10, 0.33)
    probe_coverage: tuple[float, float] = (0.37, 0.60)
    blend_same_scene_prob: float = 0.5

    def __post_init__(self):
        c, t, h, w = self.clip_shape
        if t < 4 or h < 8 or w < 8 or c < 1:
            raise ValueError(f"clip shape too small: {self.clip_shape}")
        for name in ("train_real", "train_fake", "val_real", "val_fake", "probe_real", "probe_fake"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if min(self.train_mix) < 0 or sum(self.train_mix) <= 0:
            raise ValueError(f"invalid train mix {self.train_mix}")
        for lo, hi, name in (
            (*self.train_tcount, "train_tcount"),
            (*self.probe_tcount, "probe_tcount"),
        ):
            if not 1 <= lo <= hi < t:
                raise ValueError(f"{name} range {(lo, hi)} invalid for clip length {t}")
        if self.train_tcount[1] >= self.probe_tcount[0] and self.probe_tcount[1] >= self.train_tcount[0]:
            raise ValueError("train and probe drop/repeat count ranges must be disjoint")
        if self.train_coverage[1] >= self.probe_coverage[0] and self.probe_coverage[1] >= self.train_coverage[0]:
            raise ValueError("train and probe mask coverage ranges must be disjoint")
        if not 0.0 <= self.blend_same_scene_prob <= 1.0:
            raise ValueError("blend_same_scene_prob must be in [0, 1]")


@dataclass
class ClipDataset:
    """Labeled clip collection; values are float32 in [0, 1]."""

    clips: np.ndarray  # [N, C, T, H, W]
    labels: np.ndarray  # uint8, 0 = real, 1 = fake
    kinds: np.ndarray  # uint8, KIND_* codes
    ids: np.ndarray  # uint32
    seeds: tuple[str, ...] = field(default_factory=tuple)  # provenance tags, "-" if unknown

    def __post_init__(self):
        if self.clips.ndim != 5:
            raise ValueError(f"clips must be [N, C, T, H, W], got {self.clips.shape}")
        n = self.clips.shape[0]
        if not (len(self.labels) == len(self.kinds) == len(self.ids) == n):
            raise ValueError("clips/labels/kinds/ids length mismatch")
        if not self.seeds:
            self.seeds = ("-",) * n

    def __len__(self) -> int:
        return self.clips.shape[0]

    @property
    def clip_shape(self) -> tuple[int, int, int, int]:
        return tuple(self.clips.shape[1:])

    def real_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)


def gen_real_clip(seed, shape: tuple[int, int, int, int] = (3, 8, 32, 32), t0: int = 0) -> np.ndarray:
    """Render a temporally coherent clip; deterministic per (seed, shape, t0).

    The scene is a smooth multi-wave texture panning rigidly along a smooth
    random trajectory, under a slowly oscillating illumination gain and a
    per-scene brightness offset.  Everything is a closed form of the frame
    index, so ``t0`` shifts the rendered window in time and two windows of
    the same seed come from the same underlying "video".  Consecutive frames
    differ by well under 0.1 mean absolute intensity.
    """
    c, length, height, width = shape
    rng = np.random.default_rng(seed)

    n_waves = 3
    wave_freq = rng.uniform(0.4, 1.6, size=(n_waves, 2)) * 2 * np.pi / min(height, width)
    wave_phase = rng.uniform(0.0, 2 * np.pi, size=n_waves)
    chan_amp = rng.uniform(0.4, 1.0, size=(c, n_waves))

    # Constant-velocity pan: real motion never vanishes, so a repeated frame
    # (one exactly-still step) is always anomalous.
    speed = rng.uniform(0.8, 2.0) * min(height, width) / 32.0
    direction = rng.uniform(0.0, 2 * np.pi)
    vy = speed * np.sin(direction)
    vx = speed * np.cos(direction)
    illum_amp = rng.uniform(0.03, 0.08)
    illum_freq = rng.uniform(0.02, 0.05)
    illum_phase = rng.uniform(0.0, 2 * np.pi)
    brightness = rng.uniform(-0.15, 0.15)  # scene identity; makes cross-scene blends visible

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    # Rigid translation of a sinusoidal texture is a pure phase shift per wave.
    wave_field = np.stack(
        [wave_freq[i, 0] * yy + wave_freq[i, 1] * xx + wave_phase[i] for i in range(n_waves)]
    )

    out = np.empty((c, length, height, width), dtype=np.float64)
    for i in range(length):
        t = t0 + i
        oy = vy * t
        ox = vx * t
        gain = 1.0 + illum_amp * np.sin(2 * np.pi * illum_freq * t + illum_phase)
        waves = np.stack(
            [np.sin(wave_field[w] + wave_freq[w, 0] * oy + wave_freq[w, 1] * ox) for w in range(n_waves)]
        )
        for ch in range(c):
            tex = 0.5 + 0.35 * np.tensordot(chan_amp[ch], waves, axes=(0, 0)) / n_waves
            out[ch, i] = gain * tex + brightness
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def frame_diff_stat(clip: np.ndarray) -> float:
    """Mean absolute difference between consecutive frames."""
    diffs = np.abs(np.diff(clip.astype(np.float64), axis=1))
    return float(diffs.mean())


def _indices_for(rng: np.random.Generator, length: int, count_range: tuple[int, int]) -> list[int]:
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    return sorted(int(i) for i in rng.choice(length, size=count, replace=False))


def _assemble(clips, labels, kinds, seeds) -> ClipDataset:
    return ClipDataset(
        clips=np.stack(clips).astype(np.float32),
        labels=np.asarray(labels, dtype=np.uint8),
        kinds=np.asarray(kinds, dtype=np.uint8),
        ids=np.arange(len(clips), dtype=np.uint32),
        seeds=tuple(seeds),
    )


def _build_mixed(
    spec: DatasetSpec,
    n_real: int,
    n_fake: int,
    real_stream: int,
    src_stream: int,
    aug_stream: int,
    partner_stream: int,
) -> ClipDataset:
    shape = spec.clip_shape
    length = shape[1]
    clips, labels, kinds, seeds = [], [], [], []
    for i in range(n_real):
        seed = clip_seed(spec.seed, real_stream, i)
        clips.append(gen_real_clip(seed, shape))
        labels.append(0)
        kinds.append(KIND_REAL)
        seeds.append(seed_tag(seed))
    mix = np.asarray(spec.train_mix, dtype=np.float64)
    mix = mix / mix.sum()
    for i in range(n_fake):
        src_seed = clip_seed(spec.seed, src_stream, i)
        source = gen_real_clip(src_seed, shape)
        rng = np.random.default_rng(clip_seed(spec.seed, aug_stream, i))
        kind = (KIND_TDROP, KIND_TREPEAT, KIND_BLEND)[int(rng.choice(3, p=mix))]
        if kind == KIND_TDROP:
            fake = temporal_dropout(source, _indices_for(rng, length, spec.train_tcount))
        elif kind == KIND_TREPEAT:
            fake = temporal_repeat(source, _indices_for(rng, length, spec.train_tcount))
        else:
            if rng.random() < spec.blend_same_scene_prob:
                offset = int(rng.integers(length // 2, 2 * length + 1))
                partner = gen_real_clip(src_seed, shape, t0=offset)
            else:
                partner = gen_real_clip(clip_seed(spec.seed, partner_stream, i), shape)
            mask = random_mask(shape[2], shape[3], rng, coverage=spec.train_coverage)
            fake = clip_blend(source, partner, mask)
        clips.append(fake.astype(np.float32))
        labels.append(1)
        kinds.append(kind)
        seeds.append(seed_tag(src_seed))
    return _assemble(clips, labels, kinds, seeds)


def build_training_set(spec: DatasetSpec) -> ClipDataset:
    """Real clips plus fakes from all three artifact kinds per the spec mix."""
    return _build_mixed(
        spec, spec.train_real, spec.train_fake,
        STREAM_TRAIN_REAL, STREAM_TRAIN_SRC, STREAM_TRAIN_AUG, STREAM_TRAIN_PARTNER,
    )


def build_validation_set(spec: DatasetSpec) -> ClipDataset:
    """Same recipe as the training set, drawn from disjoint seed streams."""
    return _build_mixed(
        spec, spec.val_real, spec.val_fake,
        STREAM_VAL_REAL, STREAM_VAL_SRC, STREAM_VAL_AUG, STREAM_VAL_PARTNER,
    )


def build_temporal_set(spec: DatasetSpec) -> ClipDataset:
    """Probe set whose fakes carry only frame-order anomalies.

    Each fake is a held-out real clip passed through temporal dropout or
    temporal repeat, so every nonzero frame is bitwise identical to a frame
    of its source clip (recoverable from the recorded seed tag).
    """
    shape = spec.clip_shape
    length = shape[1]
    clips, labels, kinds, seeds = [], [], [], []
    for i in range(spec.probe_real):
        seed = clip_seed(spec.seed, STREAM_TPROBE_REAL, i)
        clips.append(gen_real_clip(seed, shape))
        labels.append(0)
        kinds.append(KIND_REAL)
        seeds.append(seed_tag(seed))
    for i in range(spec.probe_fake):
        src_seed = clip_seed(spec.seed, STREAM_TPROBE_SRC, i)
        source = gen_real_clip(src_seed, shape)
        rng = np.random.default_rng(clip_seed(spec.seed, STREAM_TPROBE_AUG, i))
        indices = _indices_for(rng, length, spec.probe_tcount)
        if rng.random() < 0.5:
            fake = temporal_dropout(source, indices)
            kinds.append(KIND_TDROP)
        else:
            fake = temporal_repeat(source, indices)
            kinds.append(KIND_TREPEAT)
        clips.append(fake)
        labels.append(1)
        seeds.append(seed_tag(src_seed))
    return _assemble(clips, labels, kinds, seeds)


def build_spatial_set(spec: DatasetSpec) -> ClipDataset:
    """Probe set whose fakes carry only blending artifacts.

    Each fake blends two held-out real clips under one frame-constant mask;
    frame i of the fake depends only on frame i of the sources.  Masks are
    redrawn until the fake's mean frame difference does not exceed the larger
    of the two source statistics (the documented purity bound).  The seed
    tag records both sources as "fg|bg".
    """
    shape = spec.clip_shape
    clips, labels, kinds, seeds = [], [], [], []
    for i in range(spec.probe_real):
        seed = clip_seed(spec.seed, STREAM_SPROBE_REAL, i)
        clips.append(gen_real_clip(seed, shape))
        labels.append(0)
        kinds.append(KIND_REAL)
        seeds.append(seed_tag(seed))
    for i in range(spec.probe_fake):
        fg_seed = clip_seed(spec.seed, STREAM_SPROBE_SRC, 2 * i)
        bg_seed = clip_seed(spec.seed, STREAM_SPROBE_SRC, 2 * i + 1)
        fg = gen_real_clip(fg_seed, shape)
        bg = gen_real_clip(bg_seed, shape)
        bound = max(frame_diff_stat(fg), frame_diff_stat(bg)) + 1e-6
        rng = np.random.default_rng(clip_seed(spec.seed, STREAM_SPROBE_AUG, i))
        fake = None
        for _ in range(100):
            mask = random_mask(shape[2], shape[3], rng, coverage=spec.probe_coverage)
            candidate = clip_blend(fg, bg, mask).astype(np.float32)
            if frame_diff_stat(candidate) <= bound:
                fake = candidate
                break
        if fake is None:
            raise RuntimeError(f"spatial probe fake {i}: no mask satisfied the frame-diff bound")
        clips.append(fake)
        labels.append(1)
        kinds.append(KIND_BLEND)
        seeds.append(f"{seed_tag(fg_seed)}|{seed_tag(bg_seed)}")
    return _assemble(clips, labels, kinds, seeds)
