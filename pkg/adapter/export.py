#!/usr/bin/env python3
"""Export upstream model outputs into the maskfuse on-disk formats.

Standalone on purpose: this script never imports maskfuse. It writes the
formats from their specs (see the package README, "Formats") and re-reads
everything through the vendored checker at the bottom before declaring
success, so a format drift shows up here and not three tools downstream.

Source kinds
  amg_json            one JSON file per frame, holding the automatic mask
                      generator output: a list of records (or a dict with an
                      "annotations" list) where each record carries
                      "segmentation": {"size": [H, W], "counts": [...]} as
                      UNCOMPRESSED COLUMN-major RLE, plus optional
                      "predicted_iou" and "stability_score".
  labelmap_dir        one label image per frame (.png single channel or .npy
                      2-d integer), treated as the model's predictions.
  feature_tensor_dir  one .npy per frame, float (H, W, C) on the strided
                      feature grid.

Any kind may be accompanied by --gt-dir / --pred-dir label directories
(labelmap_dir takes predictions from --in, so --pred-dir is rejected there).
Frames pair up by sorted filename; counts must agree across directories.

Output counts are row-major (background first, a single leading zero only
when the mask starts with foreground), which is NOT the COCO convention.
Missing quality scores become 1.0 so downstream filtering keeps the masks;
out-of-range scores are clamped. Both cases warn on stderr.
"""

import argparse
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MFEA_MAGIC = b"MFEA"
KINDS = ("amg_json", "labelmap_dir", "feature_tensor_dir")
LABEL_SUFFIXES = (".png", ".npy")


class ExportError(Exception):
    pass


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


@dataclass
class ExportJob:
    kind: str
    in_dir: Path
    out_path: Path
    ignore_label: int = 255
    stride: int = 4
    gt_dir: Path | None = None
    pred_dir: Path | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ExportError(f"unknown kind {self.kind!r}, expected one of {KINDS}")
        if not 0 <= self.ignore_label <= 255:
            raise ExportError(f"ignore_label {self.ignore_label} outside [0, 255]")
        if self.stride < 1:
            raise ExportError(f"stride {self.stride} must be >= 1")
        if self.kind == "labelmap_dir" and self.pred_dir is not None:
            raise ExportError(
                "labelmap_dir reads predictions from --in; --pred-dir is redundant"
            )


# --------------------------------------------------------------------- rle


def rle_counts_to_dense(counts, width: int, height: int) -> np.ndarray:
    """Row-major uncompressed counts to a (height, width) boolean grid."""
    arr = np.asarray(counts, dtype=np.int64)
    if arr.size == 0 or (arr < 0).any():
        raise ExportError(f"bad rle counts {list(counts)!r}")
    if arr.sum() != width * height:
        raise ExportError(
            f"rle counts sum {int(arr.sum())} != {width}x{height} grid"
        )
    values = (np.arange(arr.size) % 2).astype(bool)
    return np.repeat(values, arr).reshape(height, width)


def dense_to_rle_counts(dense: np.ndarray) -> list:
    """Canonical row-major counts: zero only at the front, background first."""
    flat = np.asarray(dense, dtype=bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1])
    bounds = np.concatenate(([0], change + 1, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def colmajor_to_rowmajor(counts, height: int, width: int) -> list:
    """Column-major counts (COCO layout) for an HxW mask to canonical
    row-major counts. A column-major scan of the mask is a row-major scan
    of its transpose, so decode against the transposed grid and flip back."""
    transposed = rle_counts_to_dense(counts, height, width)
    return dense_to_rle_counts(transposed.T)


# ----------------------------------------------------------------- writers


def write_labelmap_png(path: Path, labels: np.ndarray) -> None:
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")


def write_masklet_records(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_featuremap(path: Path, values: np.ndarray) -> None:
    h, w, d = values.shape
    with open(path, "wb") as fh:
        fh.write(MFEA_MAGIC)
        fh.write(struct.pack("<III", w, h, d))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def write_manifest(path: Path, clip: dict) -> None:
    path.write_text(json.dumps(clip, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- readers


def _sorted_files(directory: Path, suffixes) -> list:
    if not directory.is_dir():
        raise ExportError(f"{directory}: not a directory")
    files = sorted(p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() in suffixes)
    return files


def read_label_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".npy":
        arr = np.load(path)
        if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
            raise ExportError(f"{path}: expected a 2-d integer array")
    else:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I", "I;16"):
                raise ExportError(
                    f"{path}: expected a single-channel image, got mode {img.mode}"
                )
            arr = np.asarray(img)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ExportError(f"{path}: labels outside [0, 255] do not fit 8-bit maps")
    return arr.astype(np.uint8)


def _score(rec: dict, key: str, frame: int, missing: list) -> float:
    if key not in rec:
        missing.append(key)
        return 1.0
    value = float(rec[key])
    if not 0.0 <= value <= 1.0:
        clamped = min(1.0, max(0.0, value))
        _warn(f"frame {frame}: {key} {value} clamped to {clamped}")
        return clamped
    return value


def read_amg_frame(path: Path, frame: int) -> list:
    """One frame's AMG records as (dense, pred_iou, stability) tuples."""
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ExportError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(obj, dict):
        obj = obj.get("annotations")
    if not isinstance(obj, list):
        raise ExportError(f"{path}: expected a list of mask records")
    out = []
    missing: list = []
    for i, rec in enumerate(obj):
        try:
            seg = rec["segmentation"]
            h, w = (int(v) for v in seg["size"])
            counts = seg["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ExportError(f"{path}: record {i}: bad segmentation ({exc})") from exc
        if isinstance(counts, str):
            raise ExportError(
                f"{path}: record {i}: compressed RLE strings are not supported, "
                f"export uncompressed integer counts upstream"
            )
        dense = rle_counts_to_dense(colmajor_to_rowmajor(counts, h, w), w, h)
        if not dense.any():
            raise ExportError(f"{path}: record {i}: empty mask (frame {frame})")
        out.append((dense,
                    _score(rec, "predicted_iou", frame, missing),
                    _score(rec, "stability_score", frame, missing)))
    if missing:
        _warn(f"frame {frame}: {len(missing)} missing score(s) filled with 1.0")
    return out


# ------------------------------------------------------------------ export


def _check_frame_size(size, seen, frame: int, source: str):
    if seen is None:
        return size
    if size != seen:
        raise ExportError(
            f"frame {frame}: {source} size {size[1]}x{size[0]} disagrees with "
            f"{seen[1]}x{seen[0]} seen earlier"
        )
    return seen


def _load_label_dir(directory: Path) -> list:
    return [(p, read_label_image(p)) for p in _sorted_files(directory, LABEL_SUFFIXES)]


def export(job: ExportJob) -> dict:
    out_path = job.out_path
    clip_id = job.in_dir.name or "clip"
    data_dir = out_path.parent / clip_id
    data_dir.mkdir(parents=True, exist_ok=True)

    amg_frames = []
    features = []
    gt_maps = _load_label_dir(job.gt_dir) if job.gt_dir else []
    pred_maps = _load_label_dir(job.pred_dir) if job.pred_dir else []

    if job.kind == "amg_json":
        files = _sorted_files(job.in_dir, (".json",))
        amg_frames = [read_amg_frame(p, t) for t, p in enumerate(files)]
        n_frames = len(files)
    elif job.kind == "labelmap_dir":
        pred_maps = _load_label_dir(job.in_dir)
        n_frames = len(pred_maps)
    else:
        files = _sorted_files(job.in_dir, (".npy",))
        for p in files:
            arr = np.load(p)
            if arr.ndim != 3 or not np.issubdtype(arr.dtype, np.floating):
                raise ExportError(f"{p}: expected a float (H, W, C) array")
            if not np.isfinite(arr).all():
                raise ExportError(f"{p}: non-finite feature values")
            features.append(arr.astype(np.float32))
        n_frames = len(files)

    for role, maps in (("gt", gt_maps), ("pred", pred_maps)):
        if maps and len(maps) != n_frames:
            raise ExportError(
                f"{role} directory holds {len(maps)} frames, input holds {n_frames}"
            )

    # dimension agreement across every source, reported with the frame index
    size = None
    for t in range(n_frames):
        if amg_frames:
            for dense, _, _ in amg_frames[t]:
                size = _check_frame_size(dense.shape, size, t, "mask")
        for role, maps in (("gt", gt_maps), ("pred", pred_maps)):
            if maps:
                size = _check_frame_size(maps[t][1].shape, size, t, role)
        if features:
            fh, fw, _ = features[t].shape
            size = _check_frame_size((fh * job.stride, fw * job.stride), size, t,
                                     f"feature grid (stride {job.stride})")
    if size is None:
        size = (1, 1)  # zero-frame manifest still needs a nonempty extent
    height, width = (int(v) for v in size)

    labels_seen = [m for _, m in gt_maps] + [m for _, m in pred_maps]
    real = [m[m != job.ignore_label] for m in labels_seen]
    peak = max((int(m.max()) for m in real if m.size), default=0)
    num_classes = peak + 1
    if num_classes > job.ignore_label:
        raise ExportError(
            f"label {peak} collides with ignore_label {job.ignore_label}"
        )

    records = []
    next_id = 0
    for t, mset in enumerate(amg_frames):
        for dense, pred_iou, stability in mset:
            records.append({
                "frame_index": t,
                "masklet_id": next_id,
                "pred_iou": pred_iou,
                "stability": stability,
                "width": width,
                "height": height,
                "counts": dense_to_rle_counts(dense),
            })
            next_id += 1

    frames = []
    masklet_rel = f"{clip_id}/masklets.jsonl" if records else None
    if records:
        write_masklet_records(data_dir / "masklets.jsonl", records)
    for t in range(n_frames):
        entry = {"frame_index": t}
        if gt_maps:
            rel = f"{clip_id}/gt_{t:04d}.png"
            write_labelmap_png(out_path.parent / rel, gt_maps[t][1])
            entry["gt_path"] = rel
        if pred_maps:
            rel = f"{clip_id}/pred_{t:04d}.png"
            write_labelmap_png(out_path.parent / rel, pred_maps[t][1])
            entry["pred_path"] = rel
        if features:
            rel = f"{clip_id}/feat_{t:04d}.mfea"
            write_featuremap(out_path.parent / rel, features[t])
            entry["feature_path"] = rel
        if masklet_rel:
            entry["masklet_path"] = masklet_rel
        frames.append(entry)

    clip = {
        "clip_id": clip_id,
        "width": width,
        "height": height,
        "num_classes": num_classes,
        "ignore_label": job.ignore_label,
        "frames": frames,
    }
    write_manifest(out_path, clip)
    summary = check_tree(out_path, job.stride)
    summary["manifest"] = str(out_path)
    return summary


# ----------------------------------------------------- vendored format check
# Independent re-read of everything export() wrote. Deliberately does not
# share state with the writers above beyond the module-level format
# constants; each check goes back to the bytes.


def _fail(path, msg: str):
    raise ExportError(f"format check: {path}: {msg}")


def check_tree(manifest_path: Path, stride: int) -> dict:
    try:
        obj = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        _fail(manifest_path, f"not valid JSON ({exc})")
    for key in ("clip_id", "width", "height", "num_classes", "ignore_label",
                "frames"):
        if key not in obj:
            _fail(manifest_path, f"missing key {key!r}")
    width, height = int(obj["width"]), int(obj["height"])
    num_classes, ignore = int(obj["num_classes"]), int(obj["ignore_label"])
    if width < 1 or height < 1:
        _fail(manifest_path, f"empty extent {width}x{height}")
    if not 1 <= num_classes <= ignore:
        _fail(manifest_path, f"num_classes {num_classes} vs ignore {ignore}")
    root = manifest_path.parent
    counts = {"frames": len(obj["frames"]), "gt_frames": 0, "pred_frames": 0,
              "feature_frames": 0, "masklets": 0}
    known = set()
    prev = None
    masklet_files = []
    for fr in obj["frames"]:
        t = int(fr["frame_index"])
        if (prev is None and t != 0) or (prev is not None and t <= prev):
            _fail(manifest_path, f"frame indices break at {t}")
        prev = t
        known.add(t)
        for role in ("gt_path", "pred_path"):
            if role in fr:
                _check_labelmap(root / fr[role], width, height, num_classes,
                                ignore)
                counts["gt_frames" if role == "gt_path" else "pred_frames"] += 1
        if "feature_path" in fr:
            _check_featuremap(root / fr["feature_path"], width, height, stride)
            counts["feature_frames"] += 1
        if "masklet_path" in fr and root / fr["masklet_path"] not in masklet_files:
            masklet_files.append(root / fr["masklet_path"])
    for path in masklet_files:
        counts["masklets"] += _check_masklets(path, width, height, known)
    return counts


def _check_labelmap(path: Path, width, height, num_classes, ignore):
    with Image.open(path) as img:
        if img.format != "PNG" or img.mode != "L":
            _fail(path, f"expected mode-L PNG, got {img.format}/{img.mode}")
        arr = np.asarray(img)
    if arr.shape != (height, width):
        _fail(path, f"size {arr.shape[1]}x{arr.shape[0]} != {width}x{height}")
    bad = arr[(arr != ignore) & (arr >= num_classes)]
    if bad.size:
        _fail(path, f"label {int(bad[0])} outside num_classes {num_classes}")


def _check_featuremap(path: Path, width, height, stride):
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != MFEA_MAGIC:
        _fail(path, "missing MFEA magic")
    fw, fh, dim = struct.unpack("<III", raw[4:16])
    if min(fw, fh, dim) < 1:
        _fail(path, f"bad dimensions {fw}x{fh}x{dim}")
    if len(raw) != 16 + 4 * fw * fh * dim:
        _fail(path, f"truncated at {len(raw)} bytes")
    if (fw * stride, fh * stride) != (width, height):
        _fail(path, f"grid {fw}x{fh} at stride {stride} != frame {width}x{height}")
    if not np.isfinite(np.frombuffer(raw, dtype="<f4", offset=16)).all():
        _fail(path, "non-finite values")


def _check_masklets(path: Path, width, height, known_frames) -> int:
    seen_ids = set()
    total = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            rec = json.loads(line)
            where = f"line {lineno}"
            if rec["width"] != width or rec["height"] != height:
                _fail(path, f"{where}: mask size mismatch")
            if rec["frame_index"] not in known_frames:
                _fail(path, f"{where}: unknown frame {rec['frame_index']}")
            if rec["masklet_id"] in seen_ids:
                _fail(path, f"{where}: duplicate masklet_id {rec['masklet_id']}")
            seen_ids.add(rec["masklet_id"])
            for key in ("pred_iou", "stability"):
                if not 0.0 <= rec[key] <= 1.0:
                    _fail(path, f"{where}: {key} outside [0, 1]")
            cts = rec["counts"]
            if (not cts or any(c < 0 for c in cts)
                    or any(c == 0 for c in cts[1:])):
                _fail(path, f"{where}: counts are not canonical")
            if sum(cts) != width * height:
                _fail(path, f"{where}: counts sum {sum(cts)} != {width * height}")
            if sum(cts[1::2]) == 0:
                _fail(path, f"{where}: empty mask")
            total += 1
    return total


# --------------------------------------------------------------------- cli


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="export upstream outputs into maskfuse manifest trees")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="in_dir", required=True, metavar="DIR")
    parser.add_argument("--out", required=True, metavar="MANIFEST")
    parser.add_argument("--ignore", type=int, default=255)
    parser.add_argument("--stride", type=int, default=4)
    parser.add_argument("--gt-dir", default=None)
    parser.add_argument("--pred-dir", default=None)
    args = parser.parse_args(argv)
    try:
        job = ExportJob(
            kind=args.kind,
            in_dir=Path(args.in_dir),
            out_path=Path(args.out),
            ignore_label=args.ignore,
            stride=args.stride,
            gt_dir=Path(args.gt_dir) if args.gt_dir else None,
            pred_dir=Path(args.pred_dir) if args.pred_dir else None,
        )
        summary = export(job)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
