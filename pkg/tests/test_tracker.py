from __future__ import annotations

import numpy as np
import pytest

from maskfuse import Masklet, MaskletSet, ValidationError, rle_encode
from maskfuse.tracker import MaskletTrack, TrackerConfig, build_tracks, stitch_windows, track_clip

W = H = 16


def _square(y, x, size=4):
    dense = np.zeros((H, W), dtype=bool)
    dense[y : y + size, x : x + size] = True
    return dense


def _masklet(fi, mid, dense):
    return Masklet(frame_index=fi, masklet_id=mid, mask=rle_encode(dense, W, H),
                   pred_iou=1.0, stability=1.0)


def _frames(per_frame):
    """per_frame: list of lists of (mid, dense)."""
    return [
        MaskletSet(fi, tuple(_masklet(fi, mid, d) for mid, d in items))
        for fi, items in enumerate(per_frame)
    ]


def test_static_object_single_track():
    sq = _square(4, 4)
    frames = _frames([[(0, sq)], [(1, sq)], [(2, sq)]])
    tracks = build_tracks(frames, TrackerConfig(window_size=4))
    assert len(tracks) == 1
    assert tracks[0].members == ((0, 0), (1, 1), (2, 2))
    assert tracks[0].span == (0, 2)


def test_window_one_gives_singletons():
    sq = _square(4, 4)
    frames = _frames([[(0, sq)], [(1, sq)], [(2, sq)]])
    tracks = build_tracks(frames, TrackerConfig(window_size=1))
    assert len(tracks) == 3
    assert all(len(t.members) == 1 for t in tracks)


def test_long_object_stitched_across_windows():
    sq = _square(6, 6)
    frames = _frames([[(fi, sq)] for fi in range(64)])
    cfg = TrackerConfig(window_size=32)
    built = build_tracks(frames, cfg)
    assert len(built) == 2  # one per window before stitching
    stitched = stitch_windows(built, frames, cfg)
    assert len(stitched) == 1
    assert stitched[0].span == (0, 63)
    assert len(stitched[0].members) == 64
    # earlier id kept
    assert stitched[0].track_id == min(t.track_id for t in built)


def test_two_moving_objects_stay_separate():
    frames = []
    for fi in range(10):
        a = _square(2, min(2 + fi, W - 5))
        b = _square(10, max(10 - fi, 0))
        frames.append([(2 * fi, a), (2 * fi + 1, b)])
    frames = _frames(frames)
    tracks = track_clip(frames, TrackerConfig(window_size=4))
    assert len(tracks) == 2
    members = sorted(tuple(t.members) for t in tracks)
    assert members[0] == tuple((fi, 2 * fi) for fi in range(10))
    assert members[1] == tuple((fi, 2 * fi + 1) for fi in range(10))


def test_below_threshold_starts_new_track():
    a = _square(4, 4)
    b = _square(4, 7)  # iou 1/7 with a
    frames = _frames([[(0, a)], [(1, b)]])
    tracks = build_tracks(frames, TrackerConfig(window_size=8, match_iou_thresh=0.5))
    assert len(tracks) == 2
    tracks = build_tracks(frames, TrackerConfig(window_size=8, match_iou_thresh=0.1))
    assert len(tracks) == 1


def test_greedy_prefers_highest_iou():
    tall = np.zeros((H, W), dtype=bool)
    tall[2:10, 4:8] = True
    best = np.zeros((H, W), dtype=bool)
    best[2:9, 4:8] = True  # iou 7/8 with tall
    worse = np.zeros((H, W), dtype=bool)
    worse[2:8, 4:8] = True  # iou 6/8 with tall
    frames = _frames([[(0, worse), (1, tall)], [(2, best)]])
    tracks = build_tracks(frames, TrackerConfig(window_size=4, match_iou_thresh=0.5))
    by_first = {t.members[0]: t for t in tracks}
    assert by_first[(0, 1)].members == ((0, 1), (1, 2))
    assert by_first[(0, 0)].members == ((0, 0),)


def test_iou_tie_breaks_by_masklet_id():
    sq = _square(4, 4)
    # two identical masklets on frame 0 compete for one successor
    frames = _frames([[(5, sq), (3, sq)], [(0, sq)]])
    tracks = build_tracks(frames, TrackerConfig(window_size=4))
    by_first = {t.members[0]: t for t in tracks}
    assert by_first[(0, 3)].members == ((0, 3), (1, 0))
    assert by_first[(0, 5)].members == ((0, 5),)


def test_every_masklet_in_exactly_one_track():
    rng = np.random.default_rng(53)
    for _ in range(20):
        per_frame = []
        mid = 0
        for fi in range(int(rng.integers(1, 12))):
            items = []
            for _ in range(int(rng.integers(0, 4))):
                items.append((mid, _square(int(rng.integers(0, 12)),
                                           int(rng.integers(0, 12)),
                                           size=int(rng.integers(2, 6)))))
                mid += 1
            per_frame.append(items)
        frames = _frames(per_frame)
        ws = int(rng.integers(1, 6))
        tracks = track_clip(frames, TrackerConfig(window_size=ws))
        seen = [m for t in tracks for m in t.members]
        want = [(ms.frame_index, m.masklet_id) for ms in frames for m in ms]
        assert sorted(seen) == sorted(want)
        # deterministic rerun
        again = track_clip(frames, TrackerConfig(window_size=ws))
        assert [(t.track_id, t.members) for t in tracks] == \
               [(t.track_id, t.members) for t in again]


def test_stitched_tracks_do_not_depend_on_window_size():
    # stitching applies the same adjacent-frame rule as in-window linking,
    # so a deterministic masklet stream tracks identically at any window size
    rng = np.random.default_rng(59)
    per_frame = []
    mid = 0
    for fi in range(12):
        items = []
        for _ in range(int(rng.integers(1, 4))):
            items.append((mid, _square(int(rng.integers(0, 12)),
                                       int(rng.integers(0, 12)))))
            mid += 1
        per_frame.append(items)
    frames = _frames(per_frame)
    partitions = []
    for ws in (1, 3, 32):
        tracks = track_clip(frames, TrackerConfig(window_size=ws))
        partitions.append(sorted(tuple(t.members) for t in tracks))
    assert partitions[0] == partitions[1] == partitions[2]


def test_track_member_rules():
    with pytest.raises(ValidationError):
        MaskletTrack(track_id=0, members=((1, 0), (0, 1)))
    with pytest.raises(ValidationError):
        MaskletTrack(track_id=0, members=((0, 0), (0, 1)))
    with pytest.raises(ValidationError):
        MaskletTrack(track_id=0, members=())
    t = MaskletTrack(track_id=0, members=((0, 0), (2, 3)))  # gap ok
    assert t.span == (0, 2)


def test_unordered_frames_rejected():
    sq = _square(4, 4)
    frames = [MaskletSet(1, (_masklet(1, 0, sq),)), MaskletSet(0, (_masklet(0, 1, sq),))]
    with pytest.raises(ValidationError):
        build_tracks(frames, TrackerConfig())
