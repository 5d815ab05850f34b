"""Masklet-guided refinement: overwrite each masklet's support with the
class that dominates it in the base prediction.

Votes are always tallied against the unrefined prediction, and painting
happens afterwards, so masklet application order only matters where masks
overlap. Pixels the base prediction marks ignore never vote and are never
overwritten.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .masks import LabelMap, Masklet, rle_decode

log = logging.getLogger(__name__)

VOTE_SCOPES = ("per_frame", "per_track")
OVERLAP_ORDERS = ("area_desc", "pred_iou_asc")


@dataclass(frozen=True)
class RefineConfig:
    vote_scope: str = "per_frame"
    overlap_order: str = "area_desc"
    min_vote_fraction: float = 0.0

    def __post_init__(self):
        if self.vote_scope not in VOTE_SCOPES:
            raise ConfigError(f"vote_scope {self.vote_scope!r} not in {VOTE_SCOPES}")
        if self.overlap_order not in OVERLAP_ORDERS:
            raise ConfigError(
                f"overlap_order {self.overlap_order!r} not in {OVERLAP_ORDERS}"
            )
        if not (0.0 <= self.min_vote_fraction <= 1.0):
            raise ConfigError(
                f"min_vote_fraction {self.min_vote_fraction} outside [0, 1]"
            )


def _vote_counts(dense: np.ndarray, labels: np.ndarray, ignore_label: int) -> np.ndarray:
    picked = labels[dense]
    picked = picked[picked != ignore_label]
    return np.bincount(picked.astype(np.int64))


def _argmax_smallest(counts: np.ndarray) -> int:
    # np.argmax returns the first maximum, which is the smallest class id
    return int(np.argmax(counts))


def predominant_class(masklet: Masklet, labels: LabelMap) -> tuple[int, float]:
    """Majority class under the mask and its share of the non-ignore votes.

    Ignore pixels never vote; ties go to the smallest class id. A masklet
    lying entirely on ignore pixels returns (ignore_label, 0.0).
    """
    if (masklet.mask.width, masklet.mask.height) != (labels.width, labels.height):
        raise ValidationError("masklet and label map sizes differ")
    if masklet.area == 0:
        raise ValidationError("empty masklet has no predominant class")
    dense = rle_decode(masklet.mask)
    counts = _vote_counts(dense, labels.labels, labels.ignore_label)
    total = int(counts.sum())
    if total == 0:
        return labels.ignore_label, 0.0
    winner = _argmax_smallest(counts)
    return winner, int(counts[winner]) / total


def _apply_order(masklets, cfg: RefineConfig):
    """Masklet application order; stable, so input order breaks ties."""
    if cfg.overlap_order == "area_desc":
        return sorted(masklets, key=lambda m: -m.area)
    return sorted(masklets, key=lambda m: m.pred_iou)


def refine_frame(pred: LabelMap, masklets, cfg: RefineConfig,
                 votes: dict[int, tuple[int, float]] | None = None) -> LabelMap:
    """Refine one frame. votes optionally maps masklet_id to a precomputed
    (class, vote_fraction), as refine_clip does for per_track scope; masklets
    without an entry fall back to their own frame-local majority."""
    masklets = list(masklets)
    resolved = {}
    for m in masklets:
        if votes is not None and m.masklet_id in votes:
            resolved[m.masklet_id] = votes[m.masklet_id]
        else:
            resolved[m.masklet_id] = predominant_class(m, pred)
    out = pred.labels.copy()
    paintable = pred.labels != pred.ignore_label
    for m in _apply_order(masklets, cfg):
        cls, fraction = resolved[m.masklet_id]
        if fraction < cfg.min_vote_fraction or cls == pred.ignore_label:
            continue
        out[rle_decode(m.mask) & paintable] = cls
    return LabelMap(labels=out, ignore_label=pred.ignore_label)


def track_votes(preds, masklet_sets, tracks) -> dict[int, tuple[int, float]]:
    """Pool per-class pixel counts over every member masklet of each track
    (each against its own frame's prediction) and return the winning class
    and pooled vote fraction, keyed by masklet_id."""
    pred_by_frame = {}
    for lm, ms in zip(preds, masklet_sets):
        pred_by_frame[ms.frame_index] = lm
    masklet_at = {(ms.frame_index, m.masklet_id): m for ms in masklet_sets for m in ms}
    votes: dict[int, tuple[int, float]] = {}
    for track in tracks:
        pooled = np.zeros(0, dtype=np.int64)
        for fi, mid in track.members:
            m = masklet_at[(fi, mid)]
            lm = pred_by_frame[fi]
            counts = _vote_counts(rle_decode(m.mask), lm.labels, lm.ignore_label)
            if counts.size > pooled.size:
                counts[: pooled.size] += pooled
                pooled = counts
            else:
                pooled[: counts.size] += counts
        total = int(pooled.sum())
        if total == 0:
            ignore = preds[0].ignore_label if preds else 255
            decision = (ignore, 0.0)
        else:
            winner = _argmax_smallest(pooled)
            decision = (winner, int(pooled[winner]) / total)
        for _, mid in track.members:
            votes[mid] = decision
    return votes


def refine_clip(preds, masklet_sets, cfg: RefineConfig, tracks=None) -> list[LabelMap]:
    """Refine every frame of a clip. masklet_sets must align with preds
    (same order, one set per frame). per_track scope needs tracks."""
    preds = list(preds)
    masklet_sets = list(masklet_sets)
    if len(preds) != len(masklet_sets):
        raise ValidationError(
            f"{len(preds)} prediction frames vs {len(masklet_sets)} masklet sets"
        )
    votes = None
    if cfg.vote_scope == "per_track":
        if tracks is None:
            raise ConfigError("per_track refinement requires tracks")
        votes = track_votes(preds, masklet_sets, tracks)
    return [
        refine_frame(lm, ms, cfg, votes=votes)
        for lm, ms in zip(preds, masklet_sets)
    ]
