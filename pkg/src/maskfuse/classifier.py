"""Masklet classification: pooled feature vectors, a small from-scratch MLP
trained with adaptive moments, and composition of classified masklets back
into label maps."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, TrainingDivergedError, ValidationError
from .ingest import FeatureMap
from .masks import BinaryMask, LabelMap, rle_decode

_MMLP_MAGIC = b"MMLP"


def _stride_for(mask: BinaryMask, fmap: FeatureMap) -> int:
    if mask.width % fmap.width or mask.height % fmap.height:
        raise ConfigError(
            f"frame {mask.width}x{mask.height} is not an integer multiple of "
            f"feature grid {fmap.width}x{fmap.height}"
        )
    sx = mask.width // fmap.width
    sy = mask.height // fmap.height
    if sx != sy:
        raise ConfigError(f"anisotropic feature stride {sx}x{sy}")
    return sx


def pool_features(mask: BinaryMask, fmap: FeatureMap) -> np.ndarray:
    """Mean feature vector over the mask support, in double precision.

    When the feature grid is strided, the mask is nearest-neighbor
    downsampled first: cell (i, j) samples pixel (i*s + s//2, j*s + s//2).
    A mask too thin to survive downsampling falls back to the single cell
    containing its full-resolution centroid.
    """
    if mask.area == 0:
        raise ValidationError("cannot pool features over an empty mask")
    stride = _stride_for(mask, fmap)
    dense = rle_decode(mask)
    if stride == 1:
        support = dense
    else:
        ys = np.minimum(np.arange(fmap.height) * stride + stride // 2, mask.height - 1)
        xs = np.minimum(np.arange(fmap.width) * stride + stride // 2, mask.width - 1)
        support = dense[np.ix_(ys, xs)]
    if support.any():
        return fmap.values[support].astype(np.float64).mean(axis=0)
    cy, cx = np.argwhere(dense).mean(axis=0)
    cell = (min(fmap.height - 1, int(cy) // stride),
            min(fmap.width - 1, int(cx) // stride))
    return fmap.values[cell].astype(np.float64)


def pooled_dataset(gt_frames, masklet_sets, fmaps):
    """(vectors, labels) with one row per masklet, labelled by its majority
    gt class. Masklets supported only by ignore pixels are skipped."""
    from .refiner import predominant_class

    xs, ys = [], []
    for gt, mset, fmap in zip(gt_frames, masklet_sets, fmaps, strict=True):
        for masklet in mset:
            cls, _ = predominant_class(masklet, gt)
            if cls == gt.ignore_label:
                continue
            xs.append(pool_features(masklet.mask, fmap))
            ys.append(cls)
    if not xs:
        raise ValidationError("no labeled masklets to pool")
    return np.stack(xs), np.array(ys, dtype=np.int64)


# ---------------------------------------------------------------- model


@dataclass(eq=False)
class MlpModel:
    """One-hidden-layer relu network with softmax output; float64 params."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    final_loss: float | None = None

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 256
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("hidden_dim, batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate {self.learning_rate} must be > 0")


def init_model(input_dim: int, hidden_dim: int, num_classes: int, rng) -> MlpModel:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
    lim1 = math.sqrt(6.0 / (input_dim + hidden_dim))
    lim2 = math.sqrt(6.0 / (hidden_dim + num_classes))
    return MlpModel(
        w1=rng.uniform(-lim1, lim1, size=(input_dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-lim2, lim2, size=(hidden_dim, num_classes)),
        b2=np.zeros(num_classes),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mlp_forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities; x is (n, dim) or a single (dim,) vector."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ValidationError(f"input dim {x.shape[1]} != model {model.input_dim}")
    hidden = np.maximum(x @ model.w1 + model.b1, 0.0)
    probs = _softmax(hidden @ model.w2 + model.b2)
    return probs[0] if single else probs


def predict_classes(model: MlpModel, x: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(mlp_forward(model, x))
    return probs.argmax(axis=1)


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and gradients for every parameter."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    pre = x @ model.w1 + model.b1
    hidden = np.maximum(pre, 0.0)
    probs = _softmax(hidden @ model.w2 + model.b2)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.log(probs[np.arange(n), y] + eps).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dw2 = hidden.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ model.w2.T
    dhidden[pre <= 0.0] = 0.0
    dw1 = x.T @ dhidden
    db1 = dhidden.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def _index_stream(rng, size: int, count: int) -> np.ndarray:
    """Sample indices as raw draws mod size, so batch content does not
    change when the dataset is duplicated (size doubled, same content)."""
    raw = rng.integers(0, np.iinfo(np.int64).max, size=count, dtype=np.int64)
    return raw % size


def mlp_train(x: np.ndarray, y: np.ndarray, num_classes: int,
              cfg: TrainConfig = TrainConfig()) -> MlpModel:
    """Train with adaptive-moment updates; fully deterministic per seed."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValidationError(f"bad dataset shapes {x.shape} / {y.shape}")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValidationError("labels outside [0, num_classes)")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(x.shape[1], cfg.hidden_dim, num_classes, rng)
    params = {"w1": model.w1, "b1": model.b1, "w2": model.w2, "b2": model.b2}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    n = x.shape[0]
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    t = 0
    for epoch in range(cfg.epochs):
        for step in range(steps_per_epoch):
            idx = _index_stream(rng, n, cfg.batch_size)
            loss, grads = loss_and_grads(model, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch=epoch, step=step)
            t += 1
            for k in params:
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grads[k]
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grads[k] ** 2
                mhat = m[k] / (1.0 - cfg.beta1 ** t)
                vhat = v[k] / (1.0 - cfg.beta2 ** t)
                params[k] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    model.final_loss = loss_and_grads(model, x, y)[0]
    return model


# ---------------------------------------------------------------- model file


def save_model(path, model: MlpModel) -> None:
    """magic, u32 input/hidden/class dims, then f32 w1, b1, w2, b2 (all LE)."""
    with open(Path(path), "wb") as fh:
        fh.write(_MMLP_MAGIC)
        fh.write(struct.pack("<III", model.input_dim, model.hidden_dim,
                             model.num_classes))
        for arr in (model.w1, model.b1, model.w2, model.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> MlpModel:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != _MMLP_MAGIC:
        raise FormatError(f"{path}: missing model-file magic")
    d_in, hidden, classes = struct.unpack("<III", raw[4:16])
    if min(d_in, hidden, classes) < 1:
        raise FormatError(f"{path}: bad dimensions {d_in}/{hidden}/{classes}")
    sizes = [d_in * hidden, hidden, hidden * classes, classes]
    expected = 16 + 4 * sum(sizes)
    if len(raw) != expected:
        raise FormatError(f"{path}: truncated, {len(raw)} bytes != {expected}")
    flat = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    if not np.isfinite(flat).all():
        raise ValidationError(f"{path}: non-finite parameters")
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return MlpModel(
        w1=parts[0].reshape(d_in, hidden),
        b1=parts[1],
        w2=parts[2].reshape(hidden, classes),
        b2=parts[3],
    )


# ---------------------------------------------------------------- composition


def compose_segmentation(classified, width: int, height: int,
                         base: LabelMap | None = None,
                         ignore_label: int = 255,
                         overlap_order: str = "area_desc") -> LabelMap:
    """Paint (masklet, class) pairs into a label map.

    Starts from base when given, otherwise from all-ignore; uncovered pixels
    keep that start value. Overlaps resolve exactly like the refiner.
    """
    from .refiner import RefineConfig, _apply_order

    cfg = RefineConfig(overlap_order=overlap_order)
    classified = list(classified)
    if base is not None:
        if (base.width, base.height) != (width, height):
            raise ValidationError("base size disagrees with composition size")
        if base.ignore_label != ignore_label:
            raise ValidationError("base ignore_label disagrees")
        out = base.labels.copy()
    else:
        out = np.full((height, width), ignore_label, dtype=np.int32)
    by_id = {}
    for masklet, cls in classified:
        cls = int(cls)
        if cls == ignore_label or cls < 0:
            raise ValidationError(f"cannot paint class {cls}")
        by_id[id(masklet)] = cls
    for masklet in _apply_order([m for m, _ in classified], cfg):
        if (masklet.mask.width, masklet.mask.height) != (width, height):
            raise ValidationError("masklet size disagrees with composition size")
        out[rle_decode(masklet.mask)] = by_id[id(masklet)]
    return LabelMap(labels=out, ignore_label=ignore_label)
