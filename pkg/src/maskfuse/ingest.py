"""Serialized clip artifacts: manifests, label-map PNGs, masklet JSONL, features.

All paths inside a manifest are stored relative to the manifest file and
resolved against its directory on read. Writers emit deterministic bytes
(sorted JSON keys, fixed binary layout) so rewriting a read artifact is a
byte-level no-op.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError
from .masks import BinaryMask, LabelMap, Masklet, MaskletSet

_MFEA_MAGIC = b"MFEA"


@dataclass
class FrameEntry:
    """Paths for one frame; any of them may be absent."""

    frame_index: int
    gt_path: str | None = None
    pred_path: str | None = None
    masklet_path: str | None = None
    feature_path: str | None = None


@dataclass
class ClipManifest:
    clip_id: str
    width: int
    height: int
    num_classes: int
    ignore_label: int
    frames: list[FrameEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path, compare=False)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValidationError(f"num_classes {self.num_classes} < 1")
        if self.num_classes > self.ignore_label:
            raise ValidationError(
                f"num_classes {self.num_classes} collides with ignore_label "
                f"{self.ignore_label}"
            )
        if self.ignore_label == 255 and self.num_classes > 254:
            raise ValidationError("8-bit label maps allow at most 254 classes")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"clip size {self.width}x{self.height} is empty")
        prev = None
        for fr in self.frames:
            if prev is None and fr.frame_index != 0:
                raise ValidationError(
                    f"frame indices must start at 0, got {fr.frame_index}"
                )
            if prev is not None and fr.frame_index <= prev:
                raise ValidationError(
                    f"frame indices must be strictly increasing at {fr.frame_index}"
                )
            prev = fr.frame_index

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def _clip_to_dict(clip: ClipManifest) -> dict:
    frames = []
    for fr in clip.frames:
        entry = {"frame_index": fr.frame_index}
        for key in ("gt_path", "pred_path", "masklet_path", "feature_path"):
            value = getattr(fr, key)
            if value is not None:
                entry[key] = value
        frames.append(entry)
    return {
        "clip_id": clip.clip_id,
        "width": clip.width,
        "height": clip.height,
        "num_classes": clip.num_classes,
        "ignore_label": clip.ignore_label,
        "frames": frames,
    }


def _clip_from_dict(obj: dict, root: Path) -> ClipManifest:
    try:
        frames = [
            FrameEntry(
                frame_index=int(fr["frame_index"]),
                gt_path=fr.get("gt_path"),
                pred_path=fr.get("pred_path"),
                masklet_path=fr.get("masklet_path"),
                feature_path=fr.get("feature_path"),
            )
            for fr in obj["frames"]
        ]
        return ClipManifest(
            clip_id=str(obj["clip_id"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            num_classes=int(obj["num_classes"]),
            ignore_label=int(obj["ignore_label"]),
            frames=frames,
            root=root,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest missing field: {exc}") from exc


def read_manifest(path) -> list[ClipManifest]:
    """Load one manifest file; returns clips (a file may hold one or many)."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    root = path.parent
    if isinstance(obj, dict) and "clips" in obj:
        clips = [_clip_from_dict(c, root) for c in obj["clips"]]
    elif isinstance(obj, dict):
        clips = [_clip_from_dict(obj, root)]
    else:
        raise FormatError(f"{path}: manifest must be a JSON object")
    seen = set()
    for clip in clips:
        if clip.clip_id in seen:
            raise ValidationError(f"duplicate clip_id {clip.clip_id!r}")
        seen.add(clip.clip_id)
    return clips


def write_manifest(path, clips) -> None:
    path = Path(path)
    if isinstance(clips, ClipManifest):
        obj = _clip_to_dict(clips)
    else:
        obj = {"clips": [_clip_to_dict(c) for c in clips]}
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- label maps


def read_labelmap(path, ignore_label: int = 255) -> LabelMap:
    """Read an 8-bit single-channel PNG as a label map."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"{path}: not a readable image ({exc})") from exc
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG, got {img.format}")
    if img.mode not in ("L", "P"):
        raise FormatError(
            f"{path}: expected 8-bit single-channel PNG, got mode {img.mode}"
        )
    labels = np.asarray(img, dtype=np.uint8)
    return LabelMap(labels=labels, ignore_label=ignore_label)


def write_labelmap(path, labelmap: LabelMap) -> None:
    labels = labelmap.labels
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValidationError(
            f"labels outside [0, 255] cannot be stored in an 8-bit PNG "
            f"(max {int(labels.max())})"
        )
    img = Image.fromarray(labels.astype(np.uint8), mode="L")
    img.save(Path(path), format="PNG")


# ---------------------------------------------------------------- masklets


def read_masklets(path, expected_size: tuple[int, int] | None = None) -> list[MaskletSet]:
    """Read a masklet JSONL stream, grouped per frame and ordered by frame.

    expected_size is (width, height) from the clip manifest; records that
    disagree are rejected.
    """
    path = Path(path)
    by_frame: dict[int, list[Masklet]] = {}
    ids: set[int] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON ({exc})") from exc
            try:
                width = int(rec["width"])
                height = int(rec["height"])
                masklet = Masklet(
                    frame_index=int(rec["frame_index"]),
                    masklet_id=int(rec["masklet_id"]),
                    mask=BinaryMask(width, height, tuple(rec["counts"])),
                    pred_iou=float(rec["pred_iou"]),
                    stability=float(rec["stability"]),
                )
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
            if expected_size is not None and (width, height) != expected_size:
                raise ValidationError(
                    f"{path}:{lineno}: mask size {width}x{height} disagrees with "
                    f"clip size {expected_size[0]}x{expected_size[1]}"
                )
            if masklet.area == 0:
                raise ValidationError(f"{path}:{lineno}: zero-area masklet")
            if masklet.masklet_id in ids:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate masklet_id {masklet.masklet_id}"
                )
            ids.add(masklet.masklet_id)
            by_frame.setdefault(masklet.frame_index, []).append(masklet)
    return [
        MaskletSet(frame_index=fi, masklets=tuple(by_frame[fi]))
        for fi in sorted(by_frame)
    ]


def write_masklets(path, sets) -> None:
    with open(Path(path), "w") as fh:
        for ms in sets:
            for m in ms:
                rec = {
                    "frame_index": m.frame_index,
                    "masklet_id": m.masklet_id,
                    "pred_iou": m.pred_iou,
                    "stability": m.stability,
                    "width": m.mask.width,
                    "height": m.mask.height,
                    "counts": list(m.mask.counts),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------- feature maps


@dataclass(eq=False)
class FeatureMap:
    """Per-pixel float features, (height, width, dim) float32."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValidationError(f"feature map must be 3-d, got {values.shape}")
        self.values = values

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def read_featuremap(path) -> FeatureMap:
    """Read a feature file: magic, u32 width/height/dim, f32 values (all LE)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != _MFEA_MAGIC:
        raise FormatError(f"{path}: missing feature-file magic")
    width, height, dim = struct.unpack("<III", raw[4:16])
    if width < 1 or height < 1 or dim < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}x{dim}")
    expected = 16 + 4 * width * height * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: truncated, {len(raw)} bytes != {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(height, width, dim)
    if not np.isfinite(values).all():
        raise ValidationError(f"{path}: non-finite feature values")
    return FeatureMap(values=values.copy())


def write_featuremap(path, fmap: FeatureMap) -> None:
    if not np.isfinite(fmap.values).all():
        raise ValidationError("non-finite feature values")
    with open(Path(path), "wb") as fh:
        fh.write(_MFEA_MAGIC)
        fh.write(struct.pack("<III", fmap.width, fmap.height, fmap.dim))
        fh.write(np.ascontiguousarray(fmap.values, dtype="<f4").tobytes())
