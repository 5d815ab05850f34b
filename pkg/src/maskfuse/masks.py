"""Core mask data model: label maps, run-length encoded binary masks, masklets.

Binary masks are stored run-length encoded in ROW-major order with the first
count covering background pixels. This differs from the COCO convention
(column-major); see README "Formats" before writing interop code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError


def _as_label_array(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValidationError(f"label map must be 2-d, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"label map must be integer typed, got {arr.dtype}")
    return arr


@dataclass(eq=False)
class LabelMap:
    """Dense per-pixel class ids for one frame. labels is (height, width)."""

    labels: np.ndarray
    ignore_label: int = 255

    def __post_init__(self):
        self.labels = _as_label_array(self.labels)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """RLE binary mask. counts alternate background/foreground, background first."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"mask size {self.width}x{self.height} is empty")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise FormatError("rle counts must be non-empty")
        if any(c < 0 for c in counts):
            raise FormatError("rle counts must be non-negative")
        # A single leading zero flags a foreground start; zeros must never pair up.
        for a, b in zip(counts, counts[1:]):
            if a == 0 and b == 0:
                raise FormatError("rle counts contain consecutive zeros")
        total = sum(counts)
        if total != self.width * self.height:
            raise FormatError(
                f"rle counts sum {total} != {self.width}x{self.height} grid"
            )

    @property
    def area(self) -> int:
        """Foreground pixel count, computed from runs without decoding."""
        return sum(self.counts[1::2])


def rle_encode(dense, width: int, height: int) -> BinaryMask:
    """Encode a row-major boolean grid. Output is canonical: a zero count
    appears only at the front, and only when the grid starts with foreground."""
    flat = np.asarray(dense, dtype=bool).ravel()
    if flat.size != width * height:
        raise FormatError(
            f"dense grid has {flat.size} pixels, expected {width * height}"
        )
    change = np.flatnonzero(flat[1:] != flat[:-1])
    bounds = np.concatenate(([0], change + 1, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return BinaryMask(width=width, height=height, counts=tuple(runs))


def rle_decode(mask: BinaryMask) -> np.ndarray:
    """Decode to a (height, width) boolean array."""
    counts = np.asarray(mask.counts, dtype=np.int64)
    values = (np.arange(counts.size) % 2).astype(bool)
    flat = np.repeat(values, counts)
    return flat.reshape(mask.height, mask.width)


def mask_area(mask: BinaryMask) -> int:
    return mask.area


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union. Two empty masks have IoU 1.0 by convention."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValidationError(
            f"mask size mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    da = rle_decode(a)
    db = rle_decode(b)
    union = int(np.logical_or(da, db).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(da, db).sum())
    return inter / union


def dense_iou(da: np.ndarray, db: np.ndarray) -> float:
    """mask_iou on already-decoded boolean arrays (same empty/empty convention)."""
    union = int(np.logical_or(da, db).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(da, db).sum()) / union


def _offsets(radius: int):
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy or dx:
                yield dy, dx


def _shifted_views(a: np.ndarray, dy: int, dx: int):
    """Aligned (destination, source) views of a for a shift by (dy, dx)."""
    h, w = a.shape
    dst = (slice(max(0, -dy), h - max(0, dy)), slice(max(0, -dx), w - max(0, dx)))
    src = (slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx)))
    return dst, src


def chebyshev_dilate(dense: np.ndarray, radius: int) -> np.ndarray:
    """Dilate a boolean grid with a (2r+1) square; outside the frame is empty."""
    out = dense.copy()
    for dy, dx in _offsets(radius):
        dst, src = _shifted_views(dense, dy, dx)
        out[dst] |= dense[src]
    return out


def chebyshev_erode(dense: np.ndarray, radius: int) -> np.ndarray:
    """Erode with a (2r+1) square; outside the frame counts as foreground,
    so the frame border alone never erodes anything."""
    return ~chebyshev_dilate(~dense, radius)


@dataclass(frozen=True)
class Masklet:
    """One class-agnostic mask on one frame, with its generator quality scores."""

    frame_index: int
    masklet_id: int
    mask: BinaryMask
    pred_iou: float
    stability: float

    def __post_init__(self):
        if not (0.0 <= self.pred_iou <= 1.0):
            raise ValidationError(f"pred_iou {self.pred_iou} outside [0, 1]")
        if not (0.0 <= self.stability <= 1.0):
            raise ValidationError(f"stability {self.stability} outside [0, 1]")

    @property
    def area(self) -> int:
        return self.mask.area


@dataclass(frozen=True)
class MaskletSet:
    """All masklets of one frame."""

    frame_index: int
    masklets: tuple[Masklet, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "masklets", tuple(self.masklets))
        for m in self.masklets:
            if m.frame_index != self.frame_index:
                raise ValidationError(
                    f"masklet frame {m.frame_index} in set for frame {self.frame_index}"
                )

    def __len__(self) -> int:
        return len(self.masklets)

    def __iter__(self):
        return iter(self.masklets)
