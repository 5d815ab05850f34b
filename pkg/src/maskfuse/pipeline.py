"""End-to-end paths over manifest corpora: load clip bundles, evaluate
prediction quality, run the filter/track/refine chain, and sweep single
parameters. All heavy per-clip work happens in picklable module-level
functions so it can fan out over processes."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ValidationError
from .filtering import FilterConfig, filter_masklets
from .ingest import (
    ClipManifest,
    read_featuremap,
    read_labelmap,
    read_manifest,
    read_masklets,
)
from .masks import LabelMap, MaskletSet
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accumulate_confusion,
    fwiou,
    mbiou_frame_scores,
    miou,
    per_class_iou,
    vc_n,
)
from .refiner import RefineConfig, refine_clip
from .tracker import TrackerConfig, track_clip

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterConfig = field(default_factory=FilterConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    n_values: tuple[int, ...] = (8, 16)
    boundary_radius: int = 2
    # free-form provenance carried into reports, e.g. the point-grid layout
    # of whatever produced the masklet stream
    grid_note: str = "16x16"

    def __post_init__(self):
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ConfigError(f"bad n_values {self.n_values}")
        if self.boundary_radius < 1:
            raise ConfigError(f"boundary_radius {self.boundary_radius} < 1")

    def to_dict(self) -> dict:
        return {
            "filter": {
                "pred_iou_thresh": self.filter.pred_iou_thresh,
                "stability_thresh": self.filter.stability_thresh,
                "stability_offset": self.filter.stability_offset,
                "dedup_iou": self.filter.dedup_iou,
            },
            "refine": {
                "vote_scope": self.refine.vote_scope,
                "overlap_order": self.refine.overlap_order,
                "min_vote_fraction": self.refine.min_vote_fraction,
            },
            "tracker": {
                "window_size": self.tracker.window_size,
                "match_iou_thresh": self.tracker.match_iou_thresh,
            },
            "n_values": list(self.n_values),
            "boundary_radius": self.boundary_radius,
            "grid_note": self.grid_note,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        return cls(
            filter=FilterConfig(**obj.get("filter", {})),
            refine=RefineConfig(**obj.get("refine", {})),
            tracker=TrackerConfig(**obj.get("tracker", {})),
            n_values=tuple(obj.get("n_values", (8, 16))),
            boundary_radius=obj.get("boundary_radius", 2),
            grid_note=obj.get("grid_note", "16x16"),
        )


@dataclass(eq=False)
class ClipBundle:
    """Everything a manifest clip points at, keyed by frame index."""

    manifest: ClipManifest
    gt: dict[int, LabelMap]
    pred: dict[int, LabelMap]
    masklets: dict[int, MaskletSet]
    feature_paths: dict[int, str]

    def features_for(self, frame_index: int):
        path = self.feature_paths.get(frame_index)
        return None if path is None else read_featuremap(path)


def load_bundle(clip: ClipManifest, need_gt=True, need_pred=True,
                need_masklets=True) -> ClipBundle:
    gt: dict[int, LabelMap] = {}
    pred: dict[int, LabelMap] = {}
    masklets: dict[int, MaskletSet] = {}
    feature_paths: dict[int, str] = {}
    masklet_files = []
    for entry in clip.frames:
        if need_gt and entry.gt_path:
            gt[entry.frame_index] = _sized_labelmap(clip, entry.gt_path)
        if need_pred and entry.pred_path:
            pred[entry.frame_index] = _sized_labelmap(clip, entry.pred_path)
        if need_masklets and entry.masklet_path:
            resolved = str(clip.resolve(entry.masklet_path))
            if resolved not in masklet_files:
                masklet_files.append(resolved)
        if entry.feature_path:
            feature_paths[entry.frame_index] = str(clip.resolve(entry.feature_path))
    known = {entry.frame_index for entry in clip.frames}
    for path in masklet_files:
        for mset in read_masklets(path, expected_size=(clip.width, clip.height)):
            if mset.frame_index not in known:
                raise ValidationError(
                    f"{path}: masklet frame {mset.frame_index} not in manifest "
                    f"for clip {clip.clip_id}")
            if mset.frame_index in masklets:
                raise ValidationError(
                    f"{path}: duplicate masklets for frame {mset.frame_index}")
            masklets[mset.frame_index] = mset
    return ClipBundle(manifest=clip, gt=gt, pred=pred, masklets=masklets,
                      feature_paths=feature_paths)


def _sized_labelmap(clip: ClipManifest, rel: str) -> LabelMap:
    lm = read_labelmap(clip.resolve(rel), ignore_label=clip.ignore_label)
    if (lm.width, lm.height) != (clip.width, clip.height):
        raise ValidationError(
            f"{rel}: size {lm.width}x{lm.height} disagrees with manifest "
            f"{clip.width}x{clip.height}")
    return lm


def refine_bundle(bundle: ClipBundle, cfg: PipelineConfig) -> dict[int, LabelMap]:
    """Filter, track (when voting per track) and refine every frame that has
    a prediction. Frames without a masklet entry vote with an empty set."""
    frames = sorted(bundle.pred)
    preds = [bundle.pred[fi] for fi in frames]
    sets = [
        filter_masklets(
            bundle.masklets.get(fi, MaskletSet(frame_index=fi, masklets=())),
            cfg.filter)
        for fi in frames
    ]
    tracks = None
    if cfg.refine.vote_scope == "per_track":
        tracks = track_clip(sets, cfg.tracker)
    refined = refine_clip(preds, sets, cfg.refine, tracks)
    return dict(zip(frames, refined))


# ------------------------------------------------------------- evaluation


def _eval_pairs(bundle: ClipBundle):
    """Aligned (gt, pred) sequences over frames that carry both."""
    frames = sorted(set(bundle.gt) & set(bundle.pred))
    missing = sorted((set(bundle.gt) | set(bundle.pred)) - set(frames))
    if missing:
        log.warning("clip %s: skipping frames %s (need both gt and pred)",
                    bundle.manifest.clip_id, missing)
    return ([bundle.gt[fi] for fi in frames],
            [bundle.pred[fi] for fi in frames],
            len(missing))


def _clip_partial(gts, preds, num_classes, ignore_label, n_values, radius) -> dict:
    cm = ConfusionMatrix(num_classes=num_classes, ignore_label=ignore_label)
    for g, p in zip(gts, preds):
        accumulate_confusion(g, p, cm)
    return {
        "counts": cm.counts,
        "band": mbiou_frame_scores(gts, preds, radius) if gts else [],
        "vc": {n: vc_n(gts, preds, n) if gts else None for n in n_values},
        "frames": len(gts),
    }


def _reduce_partials(partials, num_classes, ignore_label, n_values) -> MetricsReport:
    cm = ConfusionMatrix(num_classes=num_classes, ignore_label=ignore_label)
    band_scores = []
    frame_count = 0
    for part in partials:
        cm.counts += part["counts"]
        band_scores.extend(part["band"])
        frame_count += part["frames"]
    mvc_out: dict[int, float | None] = {}
    skips: dict[int, int] = {}
    for n in n_values:
        scores = [part["vc"][n] for part in partials]
        kept = [s for s in scores if s is not None]
        skips[n] = len(scores) - len(kept)
        if skips[n]:
            log.warning("vc_%d: %d of %d clips had no countable window",
                        n, skips[n], len(scores))
        mvc_out[n] = float(np.mean(kept)) if kept else None
    band_kept = [s for s in band_scores if s is not None]
    pci = per_class_iou(cm)
    return MetricsReport(
        miou=miou(cm),
        fwiou=fwiou(cm),
        mbiou=float(np.mean(band_kept)) if band_kept else None,
        mvc=mvc_out,
        per_class_iou=[None if np.isnan(v) else float(v) for v in pci],
        clip_count=len(partials),
        frame_count=frame_count,
        band_frame_count=len(band_kept),
        vc_skipped_clips=skips,
        reject_pixels=int(cm.counts[:, num_classes].sum()),
    )


def _corpus_params(clips) -> tuple[int, int]:
    if not clips:
        raise ValidationError("empty manifest")
    num_classes = clips[0].num_classes
    ignore = clips[0].ignore_label
    for clip in clips:
        if (clip.num_classes, clip.ignore_label) != (num_classes, ignore):
            raise ValidationError(
                f"clip {clip.clip_id}: num_classes/ignore_label differ within corpus")
    return num_classes, ignore


def _eval_worker(args) -> dict:
    clip, n_values, radius = args
    bundle = load_bundle(clip, need_masklets=False)
    gts, preds, skipped = _eval_pairs(bundle)
    part = _clip_partial(gts, preds, clip.num_classes, clip.ignore_label,
                         n_values, radius)
    part["clip_id"] = clip.clip_id
    part["skipped_frames"] = skipped
    return part


def _pipeline_worker(args) -> dict:
    clip, cfg = args
    bundle = load_bundle(clip)
    refined_by_frame = refine_bundle(bundle, cfg)
    gts, preds, skipped = _eval_pairs(bundle)
    frames = sorted(set(bundle.gt) & set(bundle.pred))
    refined = [refined_by_frame[fi] for fi in frames]
    before = _clip_partial(gts, preds, clip.num_classes, clip.ignore_label,
                           cfg.n_values, cfg.boundary_radius)
    after = _clip_partial(gts, refined, clip.num_classes, clip.ignore_label,
                          cfg.n_values, cfg.boundary_radius)
    return {"clip_id": clip.clip_id, "skipped_frames": skipped,
            "before": before, "after": after}


def _map_jobs(worker, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(worker, items))


def run_eval(clips, n_values=(8, 16), boundary_radius=2, jobs=1) -> dict:
    """Metrics for pred vs gt over a corpus, plus per-clip mIoU."""
    num_classes, ignore = _corpus_params(clips)
    parts = _map_jobs(_eval_worker,
                      [(clip, tuple(n_values), boundary_radius) for clip in clips],
                      jobs)
    report = _reduce_partials(parts, num_classes, ignore, tuple(n_values))
    clip_rows = [
        {"clip_id": p["clip_id"], "frames": p["frames"],
         "skipped_frames": p["skipped_frames"],
         "miou": _partial_miou(p, num_classes, ignore)}
        for p in parts
    ]
    return {
        "config": {"n_values": list(n_values), "boundary_radius": boundary_radius},
        "metrics": report.to_dict(),
        "clips": clip_rows,
    }


def _partial_miou(part, num_classes, ignore) -> float | None:
    cm = ConfusionMatrix(num_classes=num_classes, ignore_label=ignore,
                         counts=part["counts"])
    try:
        return miou(cm)
    except Exception:
        return None


def run_pipeline(clips, cfg: PipelineConfig = PipelineConfig(), jobs=1) -> dict:
    """Refine every clip and score the corpus before and after."""
    num_classes, ignore = _corpus_params(clips)
    parts = _map_jobs(_pipeline_worker, [(clip, cfg) for clip in clips], jobs)
    before = _reduce_partials([p["before"] for p in parts], num_classes,
                              ignore, cfg.n_values)
    after = _reduce_partials([p["after"] for p in parts], num_classes,
                             ignore, cfg.n_values)
    clip_rows = [
        {"clip_id": p["clip_id"], "frames": p["before"]["frames"],
         "skipped_frames": p["skipped_frames"],
         "miou_before": _partial_miou(p["before"], num_classes, ignore),
         "miou_after": _partial_miou(p["after"], num_classes, ignore)}
        for p in parts
    ]
    return {
        "config": cfg.to_dict(),
        "before": before.to_dict(),
        "after": after.to_dict(),
        "clips": clip_rows,
    }


# ------------------------------------------------------------------ sweep

SWEEP_PARAMETERS = ("window", "pred_iou", "stability", "grid_note")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(
                f"sweep parameter {self.parameter!r} not in {SWEEP_PARAMETERS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")


def _sweep_variant(cfg: PipelineConfig, parameter: str, value) -> PipelineConfig:
    if parameter == "window":
        return replace(cfg, tracker=replace(cfg.tracker, window_size=int(value)))
    if parameter == "pred_iou":
        return replace(cfg, filter=replace(cfg.filter, pred_iou_thresh=float(value)))
    if parameter == "stability":
        return replace(cfg, filter=replace(cfg.filter, stability_thresh=float(value)))
    return replace(cfg, grid_note=str(value))


def run_sweep(clips, spec: SweepSpec, cfg: PipelineConfig = PipelineConfig(),
              jobs=1) -> dict:
    """One pipeline run per value; rows carry the after-refinement metrics."""
    n_values = tuple(sorted(set(cfg.n_values) | {8, 16}))
    cfg = replace(cfg, n_values=n_values)
    rows = []
    for value in spec.values:
        out = run_pipeline(clips, _sweep_variant(cfg, spec.parameter, value), jobs)
        after = out["after"]
        rows.append({
            "value": value,
            "miou": after["miou"],
            "fwiou": after["fwiou"],
            "mvc8": after["mvc"]["8"],
            "mvc16": after["mvc"]["16"],
        })
    return {"config": cfg.to_dict(), "parameter": spec.parameter, "rows": rows}


def load_corpus(manifest_path) -> list[ClipManifest]:
    return read_manifest(manifest_path)
