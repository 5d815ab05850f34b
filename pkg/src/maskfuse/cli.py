"""Command line front end.

Every subcommand reads and writes the serialized formats only (PNG label
maps, masklet JSONL, MFEA feature maps, MMLP models, JSON manifests), so
runs are reproducible from files alone. Errors out of the library surface
as one machine-readable JSON object on stderr and exit code 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import (
    TrainConfig,
    compose_segmentation,
    load_model,
    mlp_train,
    pool_features,
    pooled_dataset,
    predict_classes,
    save_model,
)
from .errors import ConfigError, MaskfuseError
from .filtering import FilterConfig, filter_masklets
from .ingest import (
    ClipManifest,
    FrameEntry,
    read_featuremap,
    read_manifest,
    write_featuremap,
    write_labelmap,
    write_manifest,
    write_masklets,
)
from .pipeline import (
    PipelineConfig,
    SweepSpec,
    load_bundle,
    refine_bundle,
    run_eval,
    run_pipeline,
    run_sweep,
)
from .refiner import OVERLAP_ORDERS, VOTE_SCOPES, RefineConfig
from .report import (
    render_before_after_figure,
    render_per_class_figure,
    render_sweep_figure,
    write_per_class_csv,
    write_report_json,
    write_sweep_csv,
)
from .synth import (
    PerturbConfig,
    ScoreModel,
    SynthConfig,
    generate_clip,
    generate_features,
    oracle_masklets,
    perturb_prediction,
)
from .tracker import TrackerConfig

log = logging.getLogger(__name__)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


# ------------------------------------------------------------- flag groups


def _add_filter_flags(p):
    p.add_argument("--pred-iou-thresh", type=float, default=0.6)
    p.add_argument("--stability-thresh", type=float, default=0.8)
    p.add_argument("--stability-offset", type=float, default=0.9)
    p.add_argument("--dedup-iou", type=float, default=None)


def _add_refine_flags(p):
    p.add_argument("--vote-scope", choices=VOTE_SCOPES, default="per_frame")
    p.add_argument("--overlap-order", choices=OVERLAP_ORDERS, default="area_desc")
    p.add_argument("--min-vote-fraction", type=float, default=0.0)


def _add_tracker_flags(p):
    p.add_argument("--window-size", type=int, default=32)
    p.add_argument("--match-iou", type=float, default=0.5)


def _add_metric_flags(p):
    p.add_argument("--n-values", default="8,16",
                   help="comma separated consistency window lengths")
    p.add_argument("--boundary-radius", type=int, default=2)


def _add_pipeline_flags(p):
    _add_filter_flags(p)
    _add_refine_flags(p)
    _add_tracker_flags(p)
    _add_metric_flags(p)
    p.add_argument("--grid-note", default="16x16",
                   help="provenance note stored in reports")
    p.add_argument("--config", default=None,
                   help="take the config embedded in a previous report JSON, "
                        "overriding the individual flags")


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _filter_config(args) -> FilterConfig:
    return FilterConfig(
        pred_iou_thresh=args.pred_iou_thresh,
        stability_thresh=args.stability_thresh,
        stability_offset=args.stability_offset,
        dedup_iou=args.dedup_iou,
    )


def _pipeline_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        obj = json.loads(Path(args.config).read_text())
        return PipelineConfig.from_dict(obj.get("config", obj))
    return PipelineConfig(
        filter=_filter_config(args),
        refine=RefineConfig(
            vote_scope=args.vote_scope,
            overlap_order=args.overlap_order,
            min_vote_fraction=args.min_vote_fraction,
        ),
        tracker=TrackerConfig(
            window_size=args.window_size,
            match_iou_thresh=args.match_iou,
        ),
        n_values=_parse_ints(args.n_values),
        boundary_radius=args.boundary_radius,
        grid_note=args.grid_note,
    )


def _abs_entry(clip: ClipManifest, entry: FrameEntry) -> FrameEntry:
    def ab(rel):
        return None if rel is None else str(clip.resolve(rel))

    return FrameEntry(
        frame_index=entry.frame_index,
        gt_path=ab(entry.gt_path),
        pred_path=ab(entry.pred_path),
        masklet_path=ab(entry.masklet_path),
        feature_path=ab(entry.feature_path),
    )


# ------------------------------------------------------------------ synth


def _beta_params(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"expected A,B beta parameters, got {text!r}")
    return (float(parts[0]), float(parts[1]))


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    score_model = ScoreModel(pred_iou=_beta_params(args.pred_beta),
                             stability=_beta_params(args.stab_beta))
    clips = []
    total_masklets = 0
    for i in range(args.clips):
        cfg = SynthConfig(
            seed=args.seed + i,
            width=args.width, height=args.height, frames=args.frames,
            num_objects=args.objects, num_classes=args.classes,
            perturb=PerturbConfig(jitter_radius=args.jitter,
                                  class_swap_rate=args.swap,
                                  label_noise_rate=args.noise),
            feature_dim=args.feature_dim,
            feature_separation=args.separation,
            feature_stride=args.stride,
        )
        clip = generate_clip(cfg)
        sets, _ = oracle_masklets(clip, score_model, seed=args.seed + 20000 + i)
        preds = perturb_prediction(clip, cfg.perturb, seed=args.seed + 10000 + i)
        fmaps = generate_features(clip, cfg, seed=args.seed + 30000 + i) \
            if args.features else None
        cid = f"clip_{i:03d}"
        cdir = out / cid
        cdir.mkdir(exist_ok=True)
        write_masklets(cdir / "masklets.jsonl", sets)
        frames = []
        for t in range(cfg.frames):
            write_labelmap(cdir / f"gt_{t:04d}.png", clip.gt[t])
            write_labelmap(cdir / f"pred_{t:04d}.png", preds[t])
            entry = FrameEntry(
                frame_index=t,
                gt_path=f"{cid}/gt_{t:04d}.png",
                pred_path=f"{cid}/pred_{t:04d}.png",
                masklet_path=f"{cid}/masklets.jsonl",
            )
            if fmaps is not None:
                write_featuremap(cdir / f"feat_{t:04d}.mfea", fmaps[t])
                entry.feature_path = f"{cid}/feat_{t:04d}.mfea"
            frames.append(entry)
        clips.append(ClipManifest(
            clip_id=cid, width=cfg.width, height=cfg.height,
            num_classes=cfg.num_classes, ignore_label=255,
            frames=frames, root=out,
        ))
        total_masklets += sum(len(s) for s in sets)
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, clips)
    _emit({"manifest": str(manifest_path), "clips": len(clips),
           "frames": sum(len(c.frames) for c in clips),
           "masklets": total_masklets})
    return 0


# ----------------------------------------------------------------- filter


def cmd_filter(args) -> int:
    cfg = _filter_config(args)
    clips = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    new_clips = []
    before = after = 0
    for clip in clips:
        bundle = load_bundle(clip, need_gt=False, need_pred=False)
        kept = {}
        for fi, mset in bundle.masklets.items():
            before += len(mset)
            kept[fi] = filter_masklets(mset, cfg)
            after += len(kept[fi])
        cdir = out / clip.clip_id
        cdir.mkdir(exist_ok=True)
        rel = f"{clip.clip_id}/masklets.jsonl"
        write_masklets(out / rel, [kept[fi] for fi in sorted(kept)])
        frames = []
        for entry in clip.frames:
            new_entry = _abs_entry(clip, entry)
            if entry.masklet_path is not None:
                new_entry.masklet_path = rel
            frames.append(new_entry)
        new_clips.append(replace(clip, frames=frames, root=out))
    write_manifest(out / "manifest.json", new_clips)
    _emit({"manifest": str(out / "manifest.json"),
           "masklets_before": before, "masklets_after": after})
    return 0


# ----------------------------------------------------------------- refine


def cmd_refine(args) -> int:
    cfg = _pipeline_config(args)
    clips = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    new_clips = []
    refined_frames = 0
    for clip in clips:
        bundle = load_bundle(clip, need_gt=False)
        refined = refine_bundle(bundle, cfg)
        cdir = out / clip.clip_id
        cdir.mkdir(exist_ok=True)
        frames = []
        for entry in clip.frames:
            new_entry = _abs_entry(clip, entry)
            if entry.frame_index in refined:
                rel = f"{clip.clip_id}/refined_{entry.frame_index:04d}.png"
                write_labelmap(out / rel, refined[entry.frame_index])
                new_entry.pred_path = rel
                refined_frames += 1
            frames.append(new_entry)
        new_clips.append(replace(clip, frames=frames, root=out))
    write_manifest(out / "manifest.json", new_clips)
    _emit({"manifest": str(out / "manifest.json"), "frames": refined_frames})
    return 0


# --------------------------------------------------------------- classify


def cmd_classify(args) -> int:
    model = load_model(args.model)
    clips = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    new_clips = []
    composed_frames = 0
    classified = 0
    for clip in clips:
        bundle = load_bundle(clip, need_gt=(args.base == "gt"),
                             need_pred=(args.base == "pred"))
        cdir = out / clip.clip_id
        cdir.mkdir(exist_ok=True)
        frames = []
        for entry in clip.frames:
            fi = entry.frame_index
            new_entry = _abs_entry(clip, entry)
            mset = bundle.masklets.get(fi)
            fmap = bundle.features_for(fi)
            base = None
            if args.base == "gt":
                base = bundle.gt.get(fi)
            elif args.base == "pred":
                base = bundle.pred.get(fi)
            missing_base = args.base != "none" and base is None
            if mset is None or fmap is None or missing_base:
                log.warning("clip %s frame %d: skipping composition "
                            "(needs masklets, features%s)", clip.clip_id, fi,
                            " and a base map" if missing_base else "")
                frames.append(new_entry)
                continue
            pairs = []
            if len(mset):
                x = np.stack([pool_features(m.mask, fmap) for m in mset])
                pairs = list(zip(list(mset), predict_classes(model, x).tolist()))
                classified += len(pairs)
            composed = compose_segmentation(
                pairs, width=clip.width, height=clip.height, base=base,
                ignore_label=clip.ignore_label,
                overlap_order=args.overlap_order)
            rel = f"{clip.clip_id}/composed_{fi:04d}.png"
            write_labelmap(out / rel, composed)
            new_entry.pred_path = rel
            composed_frames += 1
            frames.append(new_entry)
        new_clips.append(replace(clip, frames=frames, root=out))
    write_manifest(out / "manifest.json", new_clips)
    _emit({"manifest": str(out / "manifest.json"),
           "frames": composed_frames, "masklets": classified})
    return 0


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    clips = read_manifest(args.manifest)
    xs, ys = [], []
    for clip in clips:
        bundle = load_bundle(clip)
        frames = sorted(set(bundle.gt) & set(bundle.masklets)
                        & set(bundle.feature_paths))
        frames = [fi for fi in frames if len(bundle.masklets[fi])]
        if not frames:
            log.warning("clip %s contributes no training masklets", clip.clip_id)
            continue
        x, y = pooled_dataset(
            [bundle.gt[fi] for fi in frames],
            [bundle.masklets[fi] for fi in frames],
            [read_featuremap(bundle.feature_paths[fi]) for fi in frames],
        )
        xs.append(x)
        ys.append(y)
    if not xs:
        raise ConfigError("no clip provides gt, masklets and features")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    num_classes = clips[0].num_classes
    cfg = TrainConfig(hidden_dim=args.hidden_dim, learning_rate=args.learning_rate,
                      batch_size=args.batch_size, epochs=args.epochs,
                      seed=args.train_seed)
    model = mlp_train(x, y, num_classes, cfg)
    save_model(args.out, model)
    acc = float((predict_classes(model, x) == y).mean())
    _emit({"model": str(args.out), "samples": int(x.shape[0]),
           "final_loss": model.final_loss, "train_accuracy": acc})
    return 0


# ------------------------------------------------------------------- eval


def _validate_corpus(clips) -> dict:
    frames = gt_frames = pred_frames = feature_frames = masklets = 0
    for clip in clips:
        bundle = load_bundle(clip)
        frames += len(clip.frames)
        gt_frames += len(bundle.gt)
        pred_frames += len(bundle.pred)
        masklets += sum(len(ms) for ms in bundle.masklets.values())
        for fi in bundle.feature_paths:
            fmap = bundle.features_for(fi)
            if clip.width % fmap.width or clip.height % fmap.height:
                raise ConfigError(
                    f"clip {clip.clip_id} frame {fi}: feature grid "
                    f"{fmap.width}x{fmap.height} does not divide the frame")
            feature_frames += 1
    return {"validated": True, "clips": len(clips), "frames": frames,
            "gt_frames": gt_frames, "pred_frames": pred_frames,
            "feature_frames": feature_frames, "masklets": masklets}


def cmd_eval(args) -> int:
    clips = read_manifest(args.manifest)
    if args.validate_only:
        _emit(_validate_corpus(clips))
        return 0
    if not args.report:
        raise ConfigError("--report is required unless --validate-only")
    if getattr(args, "config", None):
        obj = json.loads(Path(args.config).read_text())["config"]
        n_values = tuple(obj["n_values"])
        radius = obj["boundary_radius"]
    else:
        n_values = _parse_ints(args.n_values)
        radius = args.boundary_radius
    out = run_eval(clips, n_values=n_values, boundary_radius=radius,
                   jobs=args.jobs)
    report_path = Path(args.report)
    write_report_json(report_path, out)
    if args.csv:
        write_per_class_csv(args.csv, out["metrics"]["per_class_iou"])
    if not args.no_figures:
        render_per_class_figure(
            report_path.with_name(report_path.stem + "_per_class.png"),
            out["metrics"]["per_class_iou"])
    _emit({"report": str(report_path), "miou": out["metrics"]["miou"],
           "fwiou": out["metrics"]["fwiou"]})
    return 0


# --------------------------------------------------------------- pipeline


def cmd_pipeline(args) -> int:
    cfg = _pipeline_config(args)
    clips = read_manifest(args.manifest)
    out = run_pipeline(clips, cfg, jobs=args.jobs)
    report_path = Path(args.report)
    write_report_json(report_path, out)
    if args.out:
        refined_dir = Path(args.out)
        refined_dir.mkdir(parents=True, exist_ok=True)
        new_clips = []
        for clip in clips:
            bundle = load_bundle(clip, need_gt=False)
            refined = refine_bundle(bundle, cfg)
            cdir = refined_dir / clip.clip_id
            cdir.mkdir(exist_ok=True)
            frames = []
            for entry in clip.frames:
                new_entry = _abs_entry(clip, entry)
                if entry.frame_index in refined:
                    rel = f"{clip.clip_id}/refined_{entry.frame_index:04d}.png"
                    write_labelmap(refined_dir / rel, refined[entry.frame_index])
                    new_entry.pred_path = rel
                frames.append(new_entry)
            new_clips.append(replace(clip, frames=frames, root=refined_dir))
        write_manifest(refined_dir / "manifest.json", new_clips)
    if not args.no_figures:
        render_before_after_figure(
            report_path.with_name(report_path.stem + "_before_after.png"),
            out["before"], out["after"])
    _emit({"report": str(report_path),
           "miou_before": out["before"]["miou"],
           "miou_after": out["after"]["miou"]})
    return 0


# ------------------------------------------------------------------ sweep


def cmd_sweep(args) -> int:
    cfg = _pipeline_config(args)
    clips = read_manifest(args.manifest)
    try:
        if args.parameter == "window":
            values = tuple(int(v) for v in args.values.split(","))
        elif args.parameter == "grid_note":
            values = tuple(args.values.split(","))
        else:
            values = tuple(float(v) for v in args.values.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad values for {args.parameter}: {args.values!r}") from exc
    out = run_sweep(clips, SweepSpec(parameter=args.parameter, values=values),
                    cfg, jobs=args.jobs)
    csv_path = Path(args.csv)
    write_sweep_csv(csv_path, out["rows"])
    if args.report:
        write_report_json(args.report, out)
    if not args.no_figures:
        render_sweep_figure(csv_path.with_suffix(".png"), out["rows"],
                            args.parameter)
    _emit({"csv": str(csv_path), "rows": len(out["rows"])})
    return 0


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskfuse",
        description="refine and evaluate video semantic segmentation with "
                    "class-agnostic masklet streams")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic clip corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--objects", type=int, default=5)
    p.add_argument("--classes", type=int, default=124)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--swap", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--features", action="store_true",
                   help="also write per-frame feature maps")
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--pred-beta", default=None, metavar="A,B")
    p.add_argument("--stab-beta", default=None, metavar="A,B")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filter", help="drop low scoring masklets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_filter_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("refine", help="majority-vote refine predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("classify", help="classify masklets and compose maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base", choices=("none", "gt", "pred"), default="pred")
    p.add_argument("--overlap-order", choices=OVERLAP_ORDERS, default="area_desc")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("train", help="train the masklet classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--train-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--csv", default=None, help="also write per-class IoU CSV")
    p.add_argument("--validate-only", action="store_true",
                   help="check formats and sizes, compute nothing")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--config", default=None)
    _add_metric_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="refine then score before/after")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out", default=None,
                   help="also write the refined label maps here")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="vary one parameter and tabulate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--parameter", required=True,
                   choices=("window", "pred_iou", "stability", "grid_note"))
    p.add_argument("--values", required=True,
                   help="comma separated values for the swept parameter")
    p.add_argument("--csv", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("MASKFUSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (MaskfuseError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
