"""Synthetic moving-shape clips with exact ground truth.

Everything is derived from seeded generators in a fixed draw order, so a
(config, seed) pair pins every byte of the output. Objects are painted in
index order, later objects occluding earlier ones; reflection off the frame
edges keeps each shape fully inside the image at every frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .ingest import FeatureMap
from .masks import (
    LabelMap,
    Masklet,
    MaskletSet,
    chebyshev_dilate,
    chebyshev_erode,
    rle_encode,
)
from .tracker import MaskletTrack

SHAPE_KINDS = ("rectangle", "ellipse")


@dataclass(frozen=True)
class PerturbConfig:
    """Corruption applied to ground truth to fake an imperfect predictor.

    jitter_radius: per object and frame, grow or shrink the painted region
    by a chebyshev radius drawn from [-r, r].
    class_swap_rate: chance that an object's paint uses some other class.
    label_noise_rate: per-pixel chance of a uniform random relabel.
    """

    jitter_radius: int = 0
    class_swap_rate: float = 0.0
    label_noise_rate: float = 0.0

    def __post_init__(self):
        if self.jitter_radius < 0:
            raise ConfigError(f"jitter_radius {self.jitter_radius} must be >= 0")
        for name in ("class_swap_rate", "label_noise_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} {rate} outside [0, 1]")


@dataclass(frozen=True)
class ScoreModel:
    """Beta(a, b) parameters for masklet scores; None draws a constant 1.0."""

    pred_iou: tuple[float, float] | None = None
    stability: tuple[float, float] | None = None


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    width: int = 128
    height: int = 128
    frames: int = 40
    num_objects: int = 5
    num_classes: int = 124
    velocities: tuple[float, float] = (0.5, 2.5)
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    size_range: tuple[float, float] = (0.15, 0.35)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    feature_dim: int = 64
    feature_separation: float = 4.0
    feature_stride: int = 4

    def __post_init__(self):
        if self.width < 2 or self.height < 2 or self.frames < 1:
            raise ConfigError("width/height must be >= 2 and frames >= 1")
        if self.num_objects < 1:
            raise ConfigError("num_objects must be >= 1")
        if not 2 <= self.num_classes <= 254:
            raise ConfigError(f"num_classes {self.num_classes} outside [2, 254]")
        if self.num_objects > self.num_classes - 1:
            raise ConfigError("need a distinct foreground class per object")
        lo, hi = self.velocities
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad velocity range {self.velocities}")
        if not self.shape_kinds or any(k not in SHAPE_KINDS for k in self.shape_kinds):
            raise ConfigError(f"shape_kinds must be drawn from {SHAPE_KINDS}")
        lo, hi = self.size_range
        if not 0.0 < lo <= hi:
            raise ConfigError(f"bad size_range {self.size_range}")
        side = min(self.width, self.height)
        if 2 * max(1, round(hi * side / 2.0)) + 1 > side:
            raise ConfigError("size_range upper bound does not fit the frame")
        if self.feature_dim < 1 or self.feature_stride < 1:
            raise ConfigError("feature_dim and feature_stride must be >= 1")
        if self.feature_separation < 0:
            raise ConfigError("feature_separation must be >= 0")


@dataclass(frozen=True)
class _Shape:
    kind: str
    half_w: int
    half_h: int
    cx: float
    cy: float
    vx: float
    vy: float


@dataclass(eq=False)
class SynthClip:
    """gt label maps plus the instance index map (-1 background) per frame."""

    width: int
    height: int
    num_classes: int
    classes: tuple[int, ...]
    gt: list[LabelMap]
    instances: list[np.ndarray]
    ignore_label: int = 255


def fold(x: float, lo: float, hi: float) -> float:
    """Reflect x into [lo, hi] (triangle wave), modelling elastic bounces."""
    if hi <= lo:
        return lo
    period = 2.0 * (hi - lo)
    y = (x - lo) % period
    return lo + min(y, period - y)


def _rasterize(shape: _Shape, cx: float, cy: float, width: int, height: int) -> np.ndarray:
    dense = np.zeros((height, width), dtype=bool)
    if shape.kind == "rectangle":
        x0 = int(np.floor(cx + 0.5)) - shape.half_w
        y0 = int(np.floor(cy + 0.5)) - shape.half_h
        dense[y0:y0 + 2 * shape.half_h + 1, x0:x0 + 2 * shape.half_w + 1] = True
    else:
        ys, xs = np.ogrid[:height, :width]
        dense = ((xs - cx) / shape.half_w) ** 2 + ((ys - cy) / shape.half_h) ** 2 <= 1.0
    return dense


def generate_clip(cfg: SynthConfig) -> SynthClip:
    """Draw order per seed: classes, then per object kind, half extents,
    start position, velocity (magnitude and sign per axis)."""
    rng = np.random.default_rng(cfg.seed)
    classes = tuple(
        int(c) for c in rng.choice(np.arange(1, cfg.num_classes),
                                   size=cfg.num_objects, replace=False)
    )
    side = min(cfg.width, cfg.height)
    lo, hi = cfg.size_range
    vlo, vhi = cfg.velocities
    shapes = []
    for _ in range(cfg.num_objects):
        kind = cfg.shape_kinds[int(rng.integers(len(cfg.shape_kinds)))]
        half_w = max(1, round(float(rng.uniform(lo, hi)) * side / 2.0))
        half_h = max(1, round(float(rng.uniform(lo, hi)) * side / 2.0))
        cx = float(rng.uniform(half_w, cfg.width - 1 - half_w))
        cy = float(rng.uniform(half_h, cfg.height - 1 - half_h))
        vx = float(rng.uniform(vlo, vhi)) * (1.0 if rng.integers(2) else -1.0)
        vy = float(rng.uniform(vlo, vhi)) * (1.0 if rng.integers(2) else -1.0)
        shapes.append(_Shape(kind, half_w, half_h, cx, cy, vx, vy))
    gt, instances = [], []
    for t in range(cfg.frames):
        labels = np.zeros((cfg.height, cfg.width), dtype=np.int32)
        inst = np.full((cfg.height, cfg.width), -1, dtype=np.int32)
        for i, s in enumerate(shapes):
            cx = fold(s.cx + s.vx * t, s.half_w, cfg.width - 1 - s.half_w)
            cy = fold(s.cy + s.vy * t, s.half_h, cfg.height - 1 - s.half_h)
            region = _rasterize(s, cx, cy, cfg.width, cfg.height)
            labels[region] = classes[i]
            inst[region] = i
        gt.append(LabelMap(labels=labels))
        instances.append(inst)
    return SynthClip(width=cfg.width, height=cfg.height,
                     num_classes=cfg.num_classes, classes=classes,
                     gt=gt, instances=instances)


def oracle_masklets(clip: SynthClip, score_model: ScoreModel | None = None,
                    seed: int = 0):
    """Perfect masklets (full visible region per object per frame) and the
    matching ground-truth tracks, track_id == object index. Scores are drawn
    per emitted masklet, pred_iou before stability."""
    rng = np.random.default_rng(seed)
    score_model = score_model or ScoreModel()

    def draw(params):
        return float(rng.beta(*params)) if params else 1.0

    sets = []
    members: dict[int, list[tuple[int, int]]] = {}
    next_id = 0
    for t, inst in enumerate(clip.instances):
        frame_masklets = []
        for i in range(len(clip.classes)):
            region = inst == i
            if not region.any():
                continue
            frame_masklets.append(Masklet(
                frame_index=t,
                masklet_id=next_id,
                mask=rle_encode(region, clip.width, clip.height),
                pred_iou=draw(score_model.pred_iou),
                stability=draw(score_model.stability),
            ))
            members.setdefault(i, []).append((t, next_id))
            next_id += 1
        sets.append(MaskletSet(frame_index=t, masklets=tuple(frame_masklets)))
    tracks = [MaskletTrack(track_id=i, members=tuple(mem))
              for i, mem in sorted(members.items())]
    return sets, tracks


def perturb_prediction(clip: SynthClip, perturb: PerturbConfig, seed: int) -> list[LabelMap]:
    """Rebuild each frame from scratch: paint every object's (possibly
    jittered, possibly class-swapped) visible region in object order onto a
    background-0 canvas, then sprinkle uniform label noise.

    Draws per (frame, object): jitter radius when jitter_radius > 0, then
    the swap gate and replacement class when class_swap_rate > 0. Zeroed
    rates consume nothing, so a (0, 0, 0) config reproduces gt exactly.
    """
    rng = np.random.default_rng(seed)
    out = []
    swappable = clip.num_classes > 2
    for inst in clip.instances:
        canvas = np.zeros((clip.height, clip.width), dtype=np.int32)
        for i, cls in enumerate(clip.classes):
            region = inst == i
            if perturb.jitter_radius > 0:
                r = int(rng.integers(-perturb.jitter_radius,
                                     perturb.jitter_radius + 1))
                if r > 0:
                    region = chebyshev_dilate(region, r)
                elif r < 0:
                    region = chebyshev_erode(region, -r)
            if perturb.class_swap_rate > 0 and rng.random() < perturb.class_swap_rate:
                if swappable:
                    others = [c for c in range(1, clip.num_classes) if c != cls]
                    cls = others[int(rng.integers(len(others)))]
            canvas[region] = cls
        if perturb.label_noise_rate > 0:
            hit = rng.random((clip.height, clip.width)) < perturb.label_noise_rate
            canvas[hit] = rng.integers(0, clip.num_classes, size=int(hit.sum()))
        out.append(LabelMap(labels=canvas, ignore_label=clip.ignore_label))
    return out


def class_centers(num_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    """Random unit directions rescaled so the minimum pairwise distance is
    exactly `separation` (all-zero centers when separation is 0)."""
    dirs = rng.standard_normal((num_classes, dim))
    norms = np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    unit = dirs / norms
    if num_classes < 2 or separation == 0.0:
        return unit * separation if num_classes < 2 else np.zeros_like(unit)
    diff = unit[:, None, :] - unit[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    dist[np.diag_indices(num_classes)] = np.inf
    nearest = float(dist.min())
    if nearest <= 0.0:
        raise ValidationError("degenerate class directions, reseed")
    return unit * (separation / nearest)


def generate_features(clip: SynthClip, cfg: SynthConfig, seed: int) -> list[FeatureMap]:
    """Per frame: class center of the gt label at each cell center plus
    unit gaussian noise. Centers are drawn first from the same stream, so
    class_centers(..., default_rng(seed)) reproduces them."""
    rng = np.random.default_rng(seed)
    centers = class_centers(cfg.num_classes, cfg.feature_dim,
                            cfg.feature_separation, rng)
    stride = cfg.feature_stride
    if clip.width % stride or clip.height % stride:
        raise ConfigError(
            f"frame {clip.width}x{clip.height} not divisible by stride {stride}")
    fh, fw = clip.height // stride, clip.width // stride
    ys = np.arange(fh) * stride + stride // 2
    xs = np.arange(fw) * stride + stride // 2
    # defensive: ignore cells (possible on non-synth inputs) get a zero center
    centers_ext = np.vstack([centers, np.zeros((1, cfg.feature_dim))])
    fmaps = []
    for gt in clip.gt:
        cells = gt.labels[np.ix_(ys, xs)]
        cells = np.where(cells == clip.ignore_label, cfg.num_classes, cells)
        base = centers_ext[cells]
        noise = rng.standard_normal((fh, fw, cfg.feature_dim))
        fmaps.append(FeatureMap(values=(base + noise).astype(np.float32)))
    return fmaps
