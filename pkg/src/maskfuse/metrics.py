"""Segmentation quality metrics: confusion-matrix scores, temporal
consistency over sliding windows, and boundary-band agreement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MetricUndefinedError, ValidationError
from .masks import BinaryMask, LabelMap, _offsets, _shifted_views, rle_encode

log = logging.getLogger(__name__)


@dataclass(eq=False)
class ConfusionMatrix:
    """Streaming pixel tally. counts is (num_classes, num_classes + 1);
    the extra column collects predicted-ignore pixels whose gt is a real
    class (they count as misses, never as hits for any class). Pixels whose
    gt is ignore_label are excluded entirely."""

    num_classes: int
    ignore_label: int = 255
    counts: np.ndarray = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes {self.num_classes} < 1")
        if self.num_classes > self.ignore_label:
            raise ConfigError("num_classes collides with ignore_label")
        if self.counts is None:
            self.counts = np.zeros(
                (self.num_classes, self.num_classes + 1), dtype=np.int64
            )
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.num_classes, self.num_classes + 1):
                raise ValidationError(f"counts shape {self.counts.shape} unexpected")

    @property
    def reject_tally(self) -> int:
        """Pixels predicted ignore where gt held a real class."""
        return int(self.counts[:, self.num_classes].sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if (self.num_classes, self.ignore_label) != (other.num_classes, other.ignore_label):
            raise ValidationError("cannot merge confusion matrices of different shape")
        return ConfusionMatrix(
            num_classes=self.num_classes,
            ignore_label=self.ignore_label,
            counts=self.counts + other.counts,
        )


def accumulate_confusion(gt: LabelMap, pred: LabelMap, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add one frame's pixels to cm (in place) and return it."""
    if gt.labels.shape != pred.labels.shape:
        raise ValidationError(
            f"gt {gt.labels.shape} and pred {pred.labels.shape} differ"
        )
    if gt.ignore_label != cm.ignore_label or pred.ignore_label != cm.ignore_label:
        raise ValidationError("ignore_label disagrees between maps and matrix")
    c = cm.num_classes
    g = gt.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    keep = g != cm.ignore_label
    g = g[keep]
    p = p[keep]
    if g.size == 0:
        return cm
    if int(g.max()) >= c or int(g.min()) < 0:
        raise ValidationError(f"gt label outside [0, {c}) and not ignore")
    bad = (p != cm.ignore_label) & ((p >= c) | (p < 0))
    if bad.any():
        raise ValidationError(f"pred label outside [0, {c}) and not ignore")
    pcol = np.where(p == cm.ignore_label, c, p)
    flat = np.bincount(g * (c + 1) + pcol, minlength=c * (c + 1))
    cm.counts += flat.reshape(c, c + 1)
    return cm


def _iou_parts(cm: ConfusionMatrix):
    c = cm.num_classes
    tp = np.diagonal(cm.counts[:, :c]).astype(np.float64)
    fn = cm.counts.sum(axis=1).astype(np.float64) - tp
    fp = cm.counts[:, :c].sum(axis=0).astype(np.float64) - tp
    denom = tp + fp + fn
    return tp, denom


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class, NaN where the class never occurs in gt or pred."""
    tp, denom = _iou_parts(cm)
    out = np.full(cm.num_classes, np.nan)
    present = denom > 0
    out[present] = tp[present] / denom[present]
    return out


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes present in gt or pred (tp + fp + fn > 0)."""
    tp, denom = _iou_parts(cm)
    present = denom > 0
    if not present.any():
        raise MetricUndefinedError("confusion matrix is empty")
    return float((tp[present] / denom[present]).mean())


def fwiou(cm: ConfusionMatrix) -> float:
    """IoU weighted by each class's share of gt pixels."""
    tp, denom = _iou_parts(cm)
    total = float(cm.counts.sum())
    if total == 0:
        raise MetricUndefinedError("confusion matrix is empty")
    gt_share = cm.counts.sum(axis=1).astype(np.float64) / total
    safe = np.where(denom > 0, denom, 1.0)
    return float((gt_share * (tp / safe)).sum())


# ---------------------------------------------------------------- temporal


def _check_sequence(gt_frames, pred_frames):
    if len(gt_frames) != len(pred_frames):
        raise ValidationError(
            f"{len(gt_frames)} gt frames vs {len(pred_frames)} pred frames"
        )
    if not gt_frames:
        raise ValidationError("empty frame sequence")
    shape = gt_frames[0].labels.shape
    ignore = gt_frames[0].ignore_label
    for g, p in zip(gt_frames, pred_frames):
        if g.labels.shape != shape or p.labels.shape != shape:
            raise ValidationError("frame sizes differ within the clip")
        if g.ignore_label != ignore or p.ignore_label != ignore:
            raise ValidationError("ignore_label differs within the clip")
    return ignore


def vc_n(gt_frames, pred_frames, n: int) -> float | None:
    """Sliding-window temporal consistency.

    For each window of n consecutive frames, take the pixels whose gt label
    is identical across the window and not ignore; score the fraction whose
    prediction equals that label on every window frame. Windows with no such
    pixels are skipped. Returns the mean over windows, or None when the clip
    is shorter than n or no window counted (callers treat None as a skip).
    """
    if n < 1:
        raise ConfigError(f"window length {n} < 1")
    ignore = _check_sequence(gt_frames, pred_frames)
    num = len(gt_frames)
    if num < n:
        return None
    scores = []
    gt_run = None
    ok_run = None
    prev = None
    for j in range(num):
        g = gt_frames[j].labels
        match = pred_frames[j].labels == g
        if j == 0:
            gt_run = np.ones(g.shape, dtype=np.int32)
            ok_run = match.astype(np.int32)
        else:
            same = g == prev
            gt_run = np.where(same, gt_run + 1, 1)
            ok_run = np.where(match, ok_run + 1, 0)
        prev = g
        if j >= n - 1:
            stable = (gt_run >= n) & (g != ignore)
            total = int(stable.sum())
            if total:
                ok = int((stable & (ok_run >= n)).sum())
                scores.append(ok / total)
    if not scores:
        return None
    return float(np.mean(scores))


def mvc(clips, n_values) -> dict[int, float | None]:
    """Unweighted clip mean of vc_n per n. clips yields (gt_frames, pred_frames)
    pairs; ineligible clips (too short, or no countable window) are skipped
    with a warning, and n values with no eligible clip come back as None."""
    clips = list(clips)
    out: dict[int, float | None] = {}
    for n in n_values:
        scores = []
        skipped = 0
        for gt_frames, pred_frames in clips:
            score = vc_n(gt_frames, pred_frames, n)
            if score is None:
                skipped += 1
            else:
                scores.append(score)
        if skipped:
            log.warning("vc_%d: skipped %d of %d clips", n, skipped, len(clips))
        out[n] = float(np.mean(scores)) if scores else None
    return out


# ---------------------------------------------------------------- boundaries


@dataclass(frozen=True)
class BoundaryBand:
    """Pixels within kernel_radius (Chebyshev) of a class change."""

    kernel_radius: int
    mask: BinaryMask


def _band_dense(labels: np.ndarray, ignore_label: int, radius: int) -> np.ndarray:
    """Pixel is in the band iff some in-image pixel within Chebyshev distance
    radius holds a different label. Out-of-image neighbors count as matching,
    so the frame border alone is not a boundary. Ignore pixels are excluded
    from the band (but still make their neighbors boundary pixels)."""
    band = np.zeros(labels.shape, dtype=bool)
    for dy, dx in _offsets(radius):
        if dy < 0 or (dy == 0 and dx < 0):
            continue  # symmetric pair already handled
        dst, src = _shifted_views(labels, dy, dx)
        diff = labels[dst] != labels[src]
        band[dst] |= diff
        band[src] |= diff
    band &= labels != ignore_label
    return band


def boundary_band(gt: LabelMap, kernel_radius: int = 2) -> BoundaryBand:
    if kernel_radius < 1:
        raise ConfigError(f"kernel_radius {kernel_radius} < 1")
    dense = _band_dense(gt.labels, gt.ignore_label, kernel_radius)
    return BoundaryBand(
        kernel_radius=kernel_radius,
        mask=rle_encode(dense, gt.width, gt.height),
    )


def mbiou_frame_scores(gt_frames, pred_frames, kernel_radius: int = 2) -> list[float | None]:
    """Per-frame boundary agreement A / (2|B| - A); None for bandless frames."""
    if kernel_radius < 1:
        raise ConfigError(f"kernel_radius {kernel_radius} < 1")
    ignore = _check_sequence(gt_frames, pred_frames)
    scores: list[float | None] = []
    for g, p in zip(gt_frames, pred_frames):
        band = _band_dense(g.labels, ignore, kernel_radius)
        nb = int(band.sum())
        if nb == 0:
            scores.append(None)
            continue
        agree = int((band & (g.labels == p.labels)).sum())
        scores.append(agree / (2 * nb - agree))
    return scores


def mbiou(gt_frames, pred_frames, kernel_radius: int = 2) -> float:
    """Mean boundary score over frames that have a band at all."""
    scores = [s for s in mbiou_frame_scores(gt_frames, pred_frames, kernel_radius)
              if s is not None]
    if not scores:
        raise MetricUndefinedError("no frame has a boundary band")
    return float(np.mean(scores))


# ---------------------------------------------------------------- report


@dataclass
class MetricsReport:
    """Aggregated scores for a clip corpus."""

    miou: float
    fwiou: float
    mbiou: float | None
    mvc: dict[int, float | None]
    per_class_iou: list[float | None]
    clip_count: int
    frame_count: int
    band_frame_count: int = 0
    vc_skipped_clips: dict[int, int] = field(default_factory=dict)
    reject_pixels: int = 0

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "fwiou": self.fwiou,
            "mbiou": self.mbiou,
            "mvc": {str(n): v for n, v in sorted(self.mvc.items())},
            "per_class_iou": self.per_class_iou,
            "clip_count": self.clip_count,
            "frame_count": self.frame_count,
            "band_frame_count": self.band_frame_count,
            "vc_skipped_clips": {str(n): v for n, v in sorted(self.vc_skipped_clips.items())},
            "reject_pixels": self.reject_pixels,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        return cls(
            miou=obj["miou"],
            fwiou=obj["fwiou"],
            mbiou=obj.get("mbiou"),
            mvc={int(k): v for k, v in obj.get("mvc", {}).items()},
            per_class_iou=obj.get("per_class_iou", []),
            clip_count=obj.get("clip_count", 0),
            frame_count=obj.get("frame_count", 0),
            band_frame_count=obj.get("band_frame_count", 0),
            vc_skipped_clips={int(k): v for k, v in obj.get("vc_skipped_clips", {}).items()},
            reject_pixels=obj.get("reject_pixels", 0),
        )
