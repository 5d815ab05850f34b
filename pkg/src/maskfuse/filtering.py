"""Quality filtering of masklet streams before tracking and refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .masks import MaskletSet, dense_iou, rle_decode


@dataclass(frozen=True)
class FilterConfig:
    pred_iou_thresh: float = 0.6
    stability_thresh: float = 0.8
    stability_offset: float = 0.9
    dedup_iou: float | None = None

    def __post_init__(self):
        for name in ("pred_iou_thresh", "stability_thresh"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} {v} outside [0, 1]")
        if self.stability_offset <= 0.0:
            raise ConfigError(f"stability_offset {self.stability_offset} must be > 0")
        if self.dedup_iou is not None and not (0.0 < self.dedup_iou <= 1.0):
            raise ConfigError(f"dedup_iou {self.dedup_iou} outside (0, 1]")


@dataclass(eq=False)
class ProbMask:
    """Per-pixel foreground probabilities in [0, 1], shape (height, width)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValidationError(f"prob mask must be 2-d, got {probs.shape}")
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ValidationError("probabilities outside [0, 1]")
        self.probs = probs


def stability_score(prob: ProbMask, offset: float = 0.9) -> float:
    """IoU between the two sigmoid-level binarizations of a probability mask.

    The levels are sigmoid(offset) and sigmoid(-offset); the high cut is a
    subset of the low cut, so this is |high| / |low| with empty/empty -> 1.0.
    """
    if offset <= 0.0:
        raise ConfigError(f"offset {offset} must be > 0")
    hi_level = 1.0 / (1.0 + np.exp(-offset))
    lo_level = 1.0 / (1.0 + np.exp(offset))
    hi = prob.probs >= hi_level
    lo = prob.probs >= lo_level
    return dense_iou(hi, lo)


def filter_masklets(masklet_set: MaskletSet, cfg: FilterConfig) -> MaskletSet:
    """Keep masklets meeting both score thresholds, then optionally dedup.

    Dedup visits survivors in (pred_iou desc, input order) and drops any
    whose mask IoU with an already-kept strictly-higher-pred_iou masklet
    reaches dedup_iou. Output preserves input order.
    """
    kept = [
        m
        for m in masklet_set
        if m.pred_iou >= cfg.pred_iou_thresh and m.stability >= cfg.stability_thresh
    ]
    if cfg.dedup_iou is not None and len(kept) > 1:
        order = sorted(range(len(kept)), key=lambda i: -kept[i].pred_iou)
        dense = {i: rle_decode(kept[i].mask) for i in order}
        winners: list[int] = []
        for i in order:
            suppressed = any(
                kept[j].pred_iou > kept[i].pred_iou
                and dense_iou(dense[j], dense[i]) >= cfg.dedup_iou
                for j in winners
            )
            if not suppressed:
                winners.append(i)
        keep_idx = set(winners)
        kept = [m for i, m in enumerate(kept) if i in keep_idx]
    return MaskletSet(frame_index=masklet_set.frame_index, masklets=tuple(kept))
