import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from aerowatch.features import EwmaParams
from aerowatch.imgproc import Blob, Region, iou
from aerowatch.regions import (UntrackableCandidatesError, cent_feature, detect_region,
                               f_feature, max_contours, pick_object_region, select_candidates,
                               spacing_filter)


def _blob(x, y, w, h, area=None):
    area = w * h if area is None else area
    c = (x + (w - 1) / 2, y + (h - 1) / 2)
    return Blob(area, c, Region(x, y, w, h, area, c))


def test_static_video_has_no_contours(rng):
    base = rng.integers(50, 200, (64, 64)).astype(np.uint8)
    assert max_contours([base] * 30) == []


def test_scene_contours_hit_object(scene_frames):
    scene, frames = scene_frames
    contours = max_contours(frames)
    assert max(iou(b.bbox.box, scene.object_box) for _, b in contours) > 0.3
    areas = np.sort([b.area for _, b in contours])[::-1]
    top = areas[:int(np.ceil(len(areas) / 4))]
    assert top.sum() >= 0.6 * areas.sum()


def test_spacing_filter():
    a = Region(0, 0, 10, 10, 100, (5.0, 5.0))
    b = Region(3, 0, 10, 10, 100, (8.0, 5.0))
    c = Region(200, 0, 10, 10, 50, (205.0, 5.0))
    kept = spacing_filter([a, b, c], 72.0)
    assert kept == [a, c]


def test_select_candidates_singleton_and_empty():
    ref = np.zeros((50, 60), np.uint8)
    key = ref.copy()
    key[10:20, 10:20] = 200
    out = select_candidates([(3, _blob(10, 10, 10, 10))], {3: key}, ref)
    assert len(out) == 1 and out[0].key_frame_index == 3
    assert select_candidates([], {}, ref) == []


def test_select_candidates_filters():
    ref = np.full((200, 200), 50, np.uint8)
    bright = ref.copy()
    bright[10:30, 10:30] = 250
    dim = ref.copy()
    dim[150:170, 150:170] = 60
    contours = [(1, _blob(10, 10, 20, 20)), (2, _blob(150, 150, 20, 20)),
                (3, _blob(12, 12, 18, 18))] + [(4 + i, _blob(100, 100, 2, 2)) for i in range(9)]
    frames = {1: bright, 2: dim, 3: bright}
    frames.update({4 + i: ref for i in range(9)})
    scores = []
    out = select_candidates(contours, frames, ref, scores)
    # top quarter = 3 contours; the two near (10,10) collapse; dim one fails F >= mean
    assert [r.box for r in out] == [(10, 10, 20, 20)]
    assert scores[0].f_value == pytest.approx(200.0)


def test_f_feature():
    ref = np.zeros((10, 10))
    key = np.zeros((10, 10))
    key[2:4, 2:4] = 10
    assert f_feature(key, ref, Region(0, 0, 5, 5), 4) == 10.0


def test_cent_feature():
    assert cent_feature([2.0] * 5) == pytest.approx(2.0 * 1.9375)
    assert cent_feature([1.0, 2.0]) == 2.0


def test_pick_single_candidate():
    r = Region(0, 0, 5, 5)
    assert pick_object_region([r], [], np.zeros((5, 5)), EwmaParams.from_fps(25)) is r


def test_pick_untrackable():
    frames = [np.full((64, 64), 80, np.uint8)] * 30
    regs = [Region(4, 4, 10, 10), Region(40, 40, 10, 10)]
    with pytest.raises(UntrackableCandidatesError):
        pick_object_region(regs, frames, frames[0], EwmaParams.from_fps(25), levels=1)


def test_pick_prefers_balanced_candidate():
    # A shifts for the last 60 of 100 frames; B jumps further but only for 4 frames
    rng = np.random.default_rng(3)
    n = gaussian_filter(rng.standard_normal((160, 160)), 2)
    base = np.clip(128 + 40 * n / n.std(), 0, 255)
    frames = []
    for t in range(100):
        f = base.copy()
        if t >= 40:
            f[20:60, 20:60] = np.roll(base, 2, axis=1)[20:60, 20:60]
        if 50 <= t < 54:
            f[100:140, 100:140] = np.roll(base, 5, axis=0)[100:140, 100:140]
        frames.append(f.round().astype(np.uint8))
    a, b = Region(25, 25, 30, 30), Region(105, 105, 30, 30)
    scores = []
    assert pick_object_region([b, a], frames, frames[0], EwmaParams(0.5, 5), levels=1,
                              scores=scores) is a
    by_box = {s.region.box: s for s in scores}
    assert by_box[b.box].cent_feature > by_box[a.box].cent_feature
    assert by_box[a.box].balanced and not by_box[b.box].balanced
    # with no balanced candidate the plain argmax wins
    still = [f.copy() for f in frames]
    for f in still:
        f[20:60, 20:60] = frames[0][20:60, 20:60]
    assert pick_object_region([a, b], still, still[0], EwmaParams(0.5, 5), levels=1) is b


def test_detect_region_end_to_end(scene_frames):
    scene, frames = scene_frames
    rep = detect_region(frames)
    assert iou(rep.region.box, scene.object_box) >= 0.5
    assert rep.region in [s.region for s in rep.candidates]
    assert abs(rep.appear_frame - scene.on_intervals[0][0]) <= 10
    d = rep.to_dict()
    cfs = [c["cent_feature"] for c in d["candidates"]]
    assert cfs == sorted(cfs, reverse=True)
    assert set(d["timings_s"]) == {"contours", "candidates", "selection"}
    assert detect_region(frames).region == rep.region
