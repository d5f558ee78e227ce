"""Video-level scoring and ROC AUC.

AUC is the Mann-Whitney statistic: the fraction of (positive, negative)
score pairs ranked correctly, ties counted as one half.  It is computed
from midranks, which matches exhaustive pair counting to floating point
roundoff and is invariant under any strictly increasing score transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Model
from .tensor import no_grad

__all__ = ["auc", "video_score", "run_eval", "EvalReport", "score_clips"]


def auc(scores, labels) -> float:
    """Rank-based AUC with midrank tie handling; needs both classes present."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ValueError(f"scores and labels must be equal-length 1D, got {s.shape} and {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative sample")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _windows_from_long_clip(video: np.ndarray, length: int, k: int) -> list[np.ndarray]:
    total = video.shape[1]
    if total < length:
        raise ValueError(f"video has {total} frames, shorter than the model clip length {length}")
    n_starts = total - length + 1
    if n_starts <= k:
        starts = np.arange(n_starts)
    else:
        starts = np.unique(np.round(np.linspace(0, n_starts - 1, k)).astype(int))
    return [video[:, s : s + length] for s in starts]


def video_score(model: Model, video, clips_per_video: int = 8) -> float:
    """Mean model probability over uniformly spaced clip windows of a video.

    ``video`` is either a list of ready clips or one long [C, T, H, W] array
    from which windows are cut.  If fewer than ``clips_per_video`` distinct
    windows exist, all of them are used once (no duplication).
    """
    if clips_per_video < 1:
        raise ValueError("clips_per_video must be >= 1")
    length = model.spec.input_shape[1]
    if isinstance(video, np.ndarray) and video.ndim == 4:
        windows = _windows_from_long_clip(video, length, clips_per_video)
    else:
        windows = [np.asarray(w) for w in video]
        if not windows:
            raise ValueError("empty video")
        if len(windows) > clips_per_video:
            pick = np.unique(np.round(np.linspace(0, len(windows) - 1, clips_per_video)).astype(int))
            windows = [windows[i] for i in pick]
    batch = np.stack(windows)
    with no_grad():
        probs = model.forward(batch, mode="eval")
    return float(probs.data.mean())


def score_clips(model: Model, clips: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode probabilities for an array of clips, in order."""
    out = []
    for start in range(0, clips.shape[0], batch_size):
        probs = model.forward(clips[start : start + batch_size], mode="eval")
        out.append(probs.data)
    return np.concatenate(out)


@dataclass(frozen=True)
class EvalReport:
    """Per-dataset AUC plus the per-clip scores behind each number."""

    aucs: dict[str, float]
    scores: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]  # name -> (ids, labels, scores)
    clips_per_video: int

    def __post_init__(self):
        for name, value in self.aucs.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"AUC for {name} outside [0, 1]: {value}")


def run_eval(model: Model, datasets, clips_per_video: int = 8) -> EvalReport:
    """Score every clip of every named dataset and compute per-dataset AUC.

    Each stored clip is treated as a single-window video (the dataset clip
    length equals the model input length), so its score is the eval-mode
    probability; longer footage goes through :func:`video_score`.
    """
    if isinstance(datasets, dict):
        items = list(datasets.items())
    else:
        items = list(datasets)
    aucs: dict[str, float] = {}
    scores: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for name, ds in items:
        probs = score_clips(model, ds.clips)
        labels = ds.labels.astype(np.int64)
        aucs[name] = auc(probs, labels)
        scores[name] = (ds.ids.copy(), labels, probs)
    return EvalReport(aucs=aucs, scores=scores, clips_per_video=clips_per_video)
