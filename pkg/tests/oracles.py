"""Independent brute-force oracles used by the test suite.

Everything here is written against the metric and refinement definitions
directly (pixel sets, per-pixel loops, literal formulas), not against the
library implementations, so a bug has to appear on both routes to hide.
Pure python + numpy indexing only; keep these dumb and obvious.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- rle


def naive_rle_decode(counts, width, height):
    """Expand alternating bg/fg runs one pixel at a time."""
    flat = []
    value = False
    for c in counts:
        flat.extend([value] * c)
        value = not value
    assert len(flat) == width * height
    return np.array(flat, dtype=bool).reshape(height, width)


def naive_rle_encode(dense):
    """Scan the flattened grid and count runs, background first."""
    flat = list(np.asarray(dense, dtype=bool).ravel())
    counts = []
    value = False
    run = 0
    for px in flat:
        if px == value:
            run += 1
        else:
            counts.append(run)
            value = px
            run = 1
    counts.append(run)
    return counts


def set_iou(da, db):
    a = {tuple(p) for p in np.argwhere(da)}
    b = {tuple(p) for p in np.argwhere(db)}
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


# ---------------------------------------------------------------- refinement


def histogram_vote(mask, labels, ignore_label):
    """Majority class under mask, ignore never votes, smallest id wins ties."""
    tally = {}
    for y, x in np.argwhere(mask):
        c = int(labels[y, x])
        if c == ignore_label:
            continue
        tally[c] = tally.get(c, 0) + 1
    if not tally:
        return ignore_label, 0.0
    best = max(tally, key=lambda c: (tally[c], -c))
    return best, tally[best] / sum(tally.values())


def sequential_paint(labels, ignore_label, masks, classes, fractions, min_vote):
    """Paint masks one by one onto a copy; ignore pixels are never overwritten."""
    out = np.array(labels, copy=True)
    for mask, cls, frac in zip(masks, classes, fractions):
        if frac < min_vote or cls == ignore_label:
            continue
        for y, x in np.argwhere(mask):
            if int(labels[y, x]) != ignore_label:
                out[y, x] = cls
    return out


# ---------------------------------------------------------------- confusion metrics


def tally_confusion(gt_frames, pred_frames, num_classes, ignore_label):
    """(num_classes, num_classes + 1) tally; last column is predicted-ignore."""
    cm = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
    for gt, pred in zip(gt_frames, pred_frames):
        for y in range(gt.shape[0]):
            for x in range(gt.shape[1]):
                g = int(gt[y, x])
                if g == ignore_label:
                    continue
                p = int(pred[y, x])
                cm[g, num_classes if p == ignore_label else p] += 1
    return cm


def naive_class_iou(cm, c):
    num_classes = cm.shape[0]
    tp = int(cm[c, c])
    fn = int(cm[c].sum()) - tp
    fp = int(cm[:, c].sum()) - tp
    denom = tp + fp + fn
    return None if denom == 0 else tp / denom


def naive_miou(cm):
    ious = [naive_class_iou(cm, c) for c in range(cm.shape[0])]
    ious = [v for v in ious if v is not None]
    return None if not ious else sum(ious) / len(ious)


def naive_fwiou(cm):
    total = int(cm.sum())
    if total == 0:
        return None
    out = 0.0
    for c in range(cm.shape[0]):
        w = int(cm[c].sum()) / total
        if w > 0:
            out += w * naive_class_iou(cm, c)
    return out


# ---------------------------------------------------------------- video consistency


def naive_vc_n(gt_frames, pred_frames, n, ignore_label):
    """Literal windowed definition over pixel sets. None when no window counts."""
    num = len(gt_frames)
    if num < n:
        return None
    scores = []
    h, w = gt_frames[0].shape
    for i in range(num - n + 1):
        s_gt = []
        for y in range(h):
            for x in range(w):
                vals = {int(g[y, x]) for g in gt_frames[i : i + n]}
                if len(vals) == 1 and vals != {ignore_label}:
                    s_gt.append((y, x))
        if not s_gt:
            continue
        ok = 0
        for y, x in s_gt:
            if all(
                int(p[y, x]) == int(g[y, x])
                for g, p in zip(gt_frames[i : i + n], pred_frames[i : i + n])
            ):
                ok += 1
        scores.append(ok / len(s_gt))
    return None if not scores else sum(scores) / len(scores)


# ---------------------------------------------------------------- boundaries


def erosion_band(labels, radius, ignore_label):
    """Per-class erosion route: union over classes of M_c minus eroded M_c.

    Erosion treats out-of-image pixels as members, so the frame border is
    not a boundary on its own.
    """
    h, w = labels.shape
    band = np.zeros((h, w), dtype=bool)
    for c in np.unique(labels):
        c = int(c)
        if c == ignore_label:
            continue
        member = labels == c
        eroded = np.zeros((h, w), dtype=bool)
        for y in range(h):
            for x in range(w):
                if not member[y, x]:
                    continue
                keep = True
                for dy in range(-radius, radius + 1):
                    for dx in range(-radius, radius + 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and not member[yy, xx]:
                            keep = False
                eroded[y, x] = keep
        band |= member & ~eroded
    return band


def naive_mbiou_frame(gt, pred, radius, ignore_label):
    """Per-frame boundary agreement score; None when the band is empty."""
    band = erosion_band(gt, radius, ignore_label)
    nb = int(band.sum())
    if nb == 0:
        return None
    agree = int((band & (gt == pred)).sum())
    return agree / (2 * nb - agree)


def naive_mbiou(gt_frames, pred_frames, radius, ignore_label):
    scores = [
        naive_mbiou_frame(g, p, radius, ignore_label)
        for g, p in zip(gt_frames, pred_frames)
    ]
    scores = [s for s in scores if s is not None]
    return None if not scores else sum(scores) / len(scores)


# ---------------------------------------------------------------- features / mlp


def naive_pool(mask, values):
    """Mean feature over mask pixels, accumulated in python floats."""
    picked = [values[y, x].astype(np.float64) for y, x in np.argwhere(mask)]
    total = picked[0] * 0.0
    for v in picked:
        total = total + v
    return total / len(picked)


def finite_difference_grads(loss_fn, params, h=1e-6):
    """Central differences on a dict of float64 arrays."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))
