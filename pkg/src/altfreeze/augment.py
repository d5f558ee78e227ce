"""Video-level clip augmentations.

Clips are numpy arrays of shape [C, L, H, W] with values in [0, 1].  Three
fake-generating operations produce training negatives: temporal dropout and
temporal repeat inject frame-order anomalies (temporal-only artifacts),
clip-level blending composites two clips under a mask that is constant
across frames (spatial-only artifacts, since frame i of the output depends
only on frame i of the inputs).  Label-preserving standard augmentations
(horizontal flip, cutout, additive Gaussian noise) and graded robustness
perturbations (blur, block distortion, contrast change) round out the set.

Every operation is pure given an explicit numpy Generator, so per-sample
randomness can be derived from (seed, epoch, sample index) and parallel
application is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "temporal_dropout",
    "temporal_repeat",
    "clip_blend",
    "random_mask",
    "StandardAugs",
    "standard_augs",
    "perturb",
    "gaussian_blur_frames",
    "PERTURB_KINDS",
    "default_temporal_count",
]

DEFAULT_MASK_COVERAGE = (0.10, 0.60)


def _check_clip(clip: np.ndarray, name: str = "clip") -> np.ndarray:
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise ValueError(f"{name} must be [C, L, H, W], got shape {clip.shape}")
    return clip


def default_temporal_count(length: int, rng: np.random.Generator) -> int:
    """Number of frames to drop/repeat: uniform in [1, ceil(L/4)]."""
    hi = max(1, int(np.ceil(length / 4)))
    return int(rng.integers(1, hi + 1))


def _check_indices(indices, length: int, op: str) -> list[int]:
    idx = [int(i) for i in indices]
    if any(i < 0 or i >= length for i in idx):
        raise ValueError(f"{op}: frame indices {idx} out of range [0, {length})")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError(f"{op}: frame indices must be strictly increasing, got {idx}")
    return idx


def temporal_dropout(clip: np.ndarray, drop_indices) -> np.ndarray:
    """Remove the given frames, shift survivors forward, zero-fill the tail."""
    clip = _check_clip(clip)
    length = clip.shape[1]
    idx = _check_indices(drop_indices, length, "temporal_dropout")
    if len(idx) >= length:
        raise ValueError("temporal_dropout: cannot drop every frame")
    out = np.zeros_like(clip)
    keep = [i for i in range(length) if i not in set(idx)]
    out[:, : len(keep)] = clip[:, keep]
    return out


def temporal_repeat(clip: np.ndarray, repeat_indices) -> np.ndarray:
    """Duplicate the given frames in place, shifting later frames out the end."""
    clip = _check_clip(clip)
    length = clip.shape[1]
    idx = set(_check_indices(repeat_indices, length, "temporal_repeat"))
    order: list[int] = []
    for i in range(length):
        order.append(i)
        if i in idx:
            order.append(i)
    return clip[:, order[:length]].copy()


def clip_blend(fg: np.ndarray, bg: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-frame convex combination fg*M + bg*(1-M) under one shared mask."""
    fg = _check_clip(fg, "fg")
    bg = _check_clip(bg, "bg")
    mask = np.asarray(mask)
    if fg.shape != bg.shape:
        raise ValueError(f"clip_blend: clip shapes differ, {fg.shape} vs {bg.shape}")
    if mask.shape != fg.shape[2:]:
        raise ValueError(
            f"clip_blend: mask shape {mask.shape} does not match frame shape {fg.shape[2:]}"
        )
    m = mask[np.newaxis, np.newaxis].astype(fg.dtype)
    return fg * m + bg * (1.0 - m)


def _soft_region_mask(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """One random filled ellipse or smooth star-shaped blob, hard-edged."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy = rng.uniform(0.3, 0.7) * height
    cx = rng.uniform(0.3, 0.7) * width
    if rng.random() < 0.5:
        ry = rng.uniform(0.18, 0.45) * height
        rx = rng.uniform(0.18, 0.45) * width
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    else:
        k = int(rng.integers(6, 13))
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=k))
        base = rng.uniform(0.20, 0.42) * min(height, width)
        radii = base * rng.uniform(0.6, 1.4, size=k)
        px, py = xx - cx, yy - cy
        pang = np.mod(np.arctan2(py, px), 2 * np.pi)
        prad = np.hypot(px, py)
        inside = prad <= np.interp(pang, angles, radii, period=2 * np.pi)
    return inside.astype(np.float64)


def _blur2d(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    radius = max(1, int(np.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(img, ((radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    for i, w in enumerate(k):
        out += w * padded[i : i + img.shape[0], :]
    padded = np.pad(out, ((0, 0), (radius, radius)), mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    for i, w in enumerate(k):
        out += w * padded[:, i : i + img.shape[1]]
    return out


def random_mask(
    height: int,
    width: int,
    rng: np.random.Generator,
    coverage: tuple[float, float] = DEFAULT_MASK_COVERAGE,
) -> np.ndarray:
    """Soft-boundary blending mask in [0, 1] covering 10-60% of the frame.

    The region is a filled random ellipse or blob softened with a Gaussian
    blur so boundary pixels take fractional values; candidates are redrawn
    until the fraction of pixels above 0.5 lies inside ``coverage``.
    """
    if height < 8 or width < 8:
        raise ValueError(f"random_mask needs H, W >= 8, got {height}x{width}")
    lo, hi = coverage
    if not (0.0 < lo < hi <= 1.0):
        raise ValueError(f"invalid coverage range {coverage}")
    for _ in range(200):
        hard = _soft_region_mask(height, width, rng)
        sigma = rng.uniform(0.8, min(height, width) / 16.0)
        soft = np.clip(_blur2d(hard, sigma), 0.0, 1.0)
        frac = float((soft > 0.5).mean())
        if lo <= frac <= hi:
            return soft
    raise RuntimeError("random_mask failed to hit the coverage range after 200 draws")


@dataclass(frozen=True)
class StandardAugs:
    flip: bool = True
    cutout: bool = True
    noise: bool = True


def standard_augs(clip: np.ndarray, rng: np.random.Generator, toggles: StandardAugs = StandardAugs()) -> np.ndarray:
    """Label-preserving augmentations applied identically across frames.

    Horizontal flip with p=0.5 and one zeroed cutout rectangle (p=0.5, same
    region in every frame) never introduce temporal artifacts; additive
    Gaussian noise draws sigma uniformly from [0, 0.05].  Output stays in
    [0, 1]; cutout pixels are exactly zero (noise is added before cutout).
    """
    clip = _check_clip(clip)
    out = clip.copy()
    h, w = out.shape[2], out.shape[3]
    if toggles.flip and rng.random() < 0.5:
        out = out[:, :, :, ::-1].copy()
    if toggles.noise:
        sigma = rng.uniform(0.0, 0.05)
        if sigma > 0:
            out = np.clip(out + rng.normal(0.0, sigma, size=out.shape), 0.0, 1.0).astype(clip.dtype)
    if toggles.cutout and rng.random() < 0.5:
        ch = int(rng.integers(max(1, h // 8), max(2, h // 4) + 1))
        cw = int(rng.integers(max(1, w // 8), max(2, w // 4) + 1))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        out[:, :, top : top + ch, left : left + cw] = 0.0
    return out


def gaussian_blur_frames(clip: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur applied per frame per channel."""
    clip = _check_clip(clip)
    if sigma <= 0:
        return clip.copy()
    out = np.empty_like(clip, dtype=np.float64)
    for c in range(clip.shape[0]):
        for t in range(clip.shape[1]):
            out[c, t] = _blur2d(clip[c, t].astype(np.float64), sigma)
    return np.clip(out, 0.0, 1.0).astype(clip.dtype)


PERTURB_KINDS = ("blur", "block", "contrast")

_BLUR_SIGMA = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)
_BLOCK_COUNT = (0, 1, 2, 4, 6, 8)
_BLOCK_FRAC = (0.0, 0.10, 0.10, 0.15, 0.15, 0.20)
_CONTRAST_FACTOR = (1.0, 0.85, 0.70, 0.55, 0.40, 0.25)


def perturb(clip: np.ndarray, kind: str, level: int, rng: np.random.Generator) -> np.ndarray:
    """Graded robustness perturbations; level 0 is always the identity.

    blur: per-frame Gaussian with sigma growing in level.
    block: random constant-gray rectangles (same placement in every frame),
    count and size growing with level.
    contrast: scale about 0.5 with a factor walking away from 1.
    """
    clip = _check_clip(clip)
    if kind not in PERTURB_KINDS:
        raise ValueError(f"unknown perturbation kind {kind!r}; pick one of {PERTURB_KINDS}")
    if not 0 <= int(level) <= 5:
        raise ValueError(f"perturbation level must be in 0..5, got {level}")
    level = int(level)
    if level == 0:
        return clip.copy()
    if kind == "blur":
        return gaussian_blur_frames(clip, _BLUR_SIGMA[level])
    if kind == "contrast":
        f = _CONTRAST_FACTOR[level]
        return np.clip(0.5 + f * (clip - 0.5), 0.0, 1.0).astype(clip.dtype)
    out = clip.copy()
    h, w = out.shape[2], out.shape[3]
    side = max(1, int(round(_BLOCK_FRAC[level] * min(h, w))))
    for _ in range(_BLOCK_COUNT[level]):
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        gray = rng.uniform(0.25, 0.75)
        out[:, :, top : top + side, left : left + side] = gray
    return out
