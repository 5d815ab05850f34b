"""Greedy IoU association of masklets into tracks, windowed then stitched."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .masks import Masklet, MaskletSet, dense_iou, rle_decode


@dataclass(frozen=True)
class TrackerConfig:
    window_size: int = 32
    match_iou_thresh: float = 0.5

    def __post_init__(self):
        if self.window_size < 1:
            raise ConfigError(f"window_size {self.window_size} < 1")
        if not (0.0 < self.match_iou_thresh <= 1.0):
            raise ConfigError(f"match_iou_thresh {self.match_iou_thresh} outside (0, 1]")


@dataclass(frozen=True)
class MaskletTrack:
    """One tracked object: (frame_index, masklet_id) members, frame-sorted.
    Gaps are allowed (occlusion); a frame appears at most once."""

    track_id: int
    members: tuple[tuple[int, int], ...]

    def __post_init__(self):
        members = tuple((int(f), int(m)) for f, m in self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise ValidationError("track must have at least one member")
        frames = [f for f, _ in members]
        if sorted(frames) != frames or len(set(frames)) != len(frames):
            raise ValidationError("track members must be sorted and unique per frame")

    @property
    def span(self) -> tuple[int, int]:
        return self.members[0][0], self.members[-1][0]


def _frame_dense(ms: MaskletSet) -> list[np.ndarray]:
    return [rle_decode(m.mask) for m in ms]


def _greedy_pairs(left: MaskletSet, left_dense, right: MaskletSet, right_dense, thresh):
    """Greedy one-to-one matching, highest IoU first; score ties broken by
    (left masklet_id, right masklet_id) ascending. Pairs below thresh unlinked."""
    candidates = []
    for i, (ml, dl) in enumerate(zip(left, left_dense)):
        for j, (mr, dr) in enumerate(zip(right, right_dense)):
            iou = dense_iou(dl, dr)
            if iou >= thresh:
                candidates.append((-iou, ml.masklet_id, mr.masklet_id, i, j))
    candidates.sort()
    used_l: set[int] = set()
    used_r: set[int] = set()
    pairs = {}
    for _, _, _, i, j in candidates:
        if i in used_l or j in used_r:
            continue
        used_l.add(i)
        used_r.add(j)
        pairs[j] = i
    return pairs


class _TrackBuilder:
    def __init__(self):
        self.members: list[list[tuple[int, int]]] = []

    def start(self, frame_index: int, masklet: Masklet) -> int:
        self.members.append([(frame_index, masklet.masklet_id)])
        return len(self.members) - 1

    def extend(self, tid: int, frame_index: int, masklet: Masklet) -> None:
        self.members[tid].append((frame_index, masklet.masklet_id))


def build_tracks(frames, cfg: TrackerConfig) -> list[MaskletTrack]:
    """Link masklets across adjacent frames inside each window of
    window_size consecutive frames. Windows are independent; crossing them
    is stitch_windows' job. Track ids are assigned in creation order, so
    identical inputs give identical ids."""
    frames = list(frames)
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_index <= prev.frame_index:
            raise ValidationError("masklet sets must be ordered by frame_index")
    builder = _TrackBuilder()
    ws = cfg.window_size
    for start in range(0, len(frames), ws):
        window = frames[start : start + ws]
        prev_tracks: dict[int, int] = {}
        prev_dense: list[np.ndarray] = []
        for pos, ms in enumerate(window):
            cur_dense = _frame_dense(ms)
            cur_tracks: dict[int, int] = {}
            pairs = (
                _greedy_pairs(window[pos - 1], prev_dense, ms, cur_dense,
                              cfg.match_iou_thresh)
                if pos else {}
            )
            for j, m in enumerate(ms):
                if j in pairs:
                    tid = prev_tracks[pairs[j]]
                    builder.extend(tid, ms.frame_index, m)
                else:
                    tid = builder.start(ms.frame_index, m)
                cur_tracks[j] = tid
            prev_tracks = cur_tracks
            prev_dense = cur_dense
    return [
        MaskletTrack(track_id=tid, members=tuple(members))
        for tid, members in enumerate(builder.members)
    ]


def stitch_windows(tracks, frames, cfg: TrackerConfig) -> list[MaskletTrack]:
    """Merge tracks across window boundaries: a track ending on the last
    frame of one window is matched (same greedy IoU rule) against tracks
    starting on the first frame of the next. The merged track keeps the
    earlier track_id."""
    frames = list(frames)
    masklet_at = {
        (ms.frame_index, m.masklet_id): m for ms in frames for m in ms
    }
    ws = cfg.window_size
    merged: dict[int, list[tuple[int, int]]] = {
        t.track_id: list(t.members) for t in tracks
    }
    alive = sorted(merged)
    for start in range(ws, len(frames), ws):
        last_fi = frames[start - 1].frame_index
        first_fi = frames[start].frame_index
        enders = [tid for tid in alive if merged[tid][-1][0] == last_fi]
        starters = [tid for tid in alive if merged[tid][0][0] == first_fi]
        if not enders or not starters:
            continue
        left = MaskletSet(last_fi, tuple(
            masklet_at[(last_fi, merged[tid][-1][1])] for tid in enders))
        right = MaskletSet(first_fi, tuple(
            masklet_at[(first_fi, merged[tid][0][1])] for tid in starters))
        pairs = _greedy_pairs(left, _frame_dense(left), right, _frame_dense(right),
                              cfg.match_iou_thresh)
        for j, i in sorted(pairs.items()):
            keep, gone = enders[i], starters[j]
            merged[keep].extend(merged[gone])
            del merged[gone]
        alive = sorted(merged)
    return [
        MaskletTrack(track_id=tid, members=tuple(merged[tid]))
        for tid in sorted(merged)
    ]


def track_clip(frames, cfg: TrackerConfig) -> list[MaskletTrack]:
    """build_tracks then stitch_windows in one call."""
    return stitch_windows(build_tracks(frames, cfg), frames, cfg)
