import numpy as np
import pytest
from hypothesis import given, strategies as st

from aerowatch.imgproc import Corner, Region
from aerowatch.rfklt import (FlowResult, LkConfig, ReferenceSet, adjacent_dist_series,
                             analysis_window, dist_feature, dist_series, dist_series_by_level,
                             lk_at_level, propagate_guess, search_radius, track_pyramidal)


def textured(rng, shape=(64, 64), scale=2.0):
    from scipy.ndimage import gaussian_filter
    n = gaussian_filter(rng.standard_normal(shape), scale)
    return 128 + 50 * n / n.std()


def ssd_oracle(ref, cur, u, w, radius):
    """Exhaustive integer SSD minimiser of the window residual."""
    x, y = u
    tpl = ref[y - w:y + w + 1, x - w:x + w + 1]
    best, arg = np.inf, None
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            win = cur[y + dy - w:y + dy + w + 1, x + dx - w:x + dx + w + 1]
            if win.shape != tpl.shape:
                continue
            e = ((tpl - win) ** 2).sum()
            if e < best:
                best, arg = e, (dx, dy)
    return np.array(arg, float)


def test_identity_level(rng):
    img = textured(rng)
    d, res, ok = lk_at_level(img, img, (32.0, 32.0))
    assert ok and np.allclose(d, 0) and res == pytest.approx(0.0, abs=1e-12)


def test_translation_level(rng):
    img = textured(rng, (64, 80))
    cur = np.roll(img, 3, axis=1)
    d, _, ok = lk_at_level(img, cur, (40.0, 32.0))
    assert ok
    assert np.allclose(d, [3.0, 0.0], atol=0.1)
    assert np.allclose(d, ssd_oracle(img, cur, (40, 32), 7, 5), atol=0.1)


def test_flat_window_not_converged():
    flat = np.full((40, 40), 90.0)
    _, _, ok = lk_at_level(flat, flat, (20.0, 20.0))
    assert not ok
    _, _, ok = lk_at_level(flat, flat, (100.0, 20.0))
    assert not ok


def test_propagate_guess():
    assert np.allclose(propagate_guess(np.array([1.0, 1.0]), np.array([0.5, 0.0])), [3.0, 2.0])


def test_dist_feature_examples():
    f = FlowResult([], np.zeros(0, bool), np.zeros((0, 2)), np.zeros(0))
    assert dist_feature(f) == 0.0
    f = FlowResult([Corner(0, 0, 1)] * 3, np.array([True, True, False]),
                   np.array([[1.0, 2.0], [3.0, 0.0], [50.0, 50.0]]), np.zeros(3))
    assert dist_feature(f) == 3.0
    f = FlowResult([Corner(0, 0, 1)], np.array([True]), np.array([[-1.0, -2.0]]), np.zeros(1))
    assert dist_feature(f) == 3.0


def test_search_radius_and_window():
    r = Region(100, 50, 30, 40)
    assert search_radius(r) == pytest.approx(50.0)
    x, y, w, h = analysis_window(r, 640, 352, 4)
    assert x <= 100 - 50 and y >= 0 and x + w <= 640 and y + h <= 352
    assert min(w, h) >> 4 >= 16


def test_reference_identity_and_immutability(scene_frames):
    scene, frames = scene_frames
    ref = ReferenceSet.build(frames[0], Region(*scene.object_box), 4)
    assert len(ref.corners) == 5
    flow = track_pyramidal(ref, frames[0])
    assert flow.matched.all()
    assert np.all(flow.displacement == 0)
    assert dist_feature(flow) == 0.0
    a = track_pyramidal(ref, frames[150])
    b = track_pyramidal(ref, frames[150])
    assert np.array_equal(a.displacement, b.displacement) and np.array_equal(a.matched, b.matched)
    with pytest.raises(ValueError):
        track_pyramidal(ref, frames[0][:, :-1])


def test_displacements_within_radius(scene_frames):
    scene, frames = scene_frames
    ref = ReferenceSet.build(frames[0], Region(*scene.object_box), 4)
    for f in frames[::10]:
        flow = track_pyramidal(ref, f)
        norms = np.hypot(*flow.displacement[flow.matched].T)
        assert np.all(norms <= ref.search_radius + 1e-9)


def test_spray_separates_dist(scene_frames):
    scene, frames = scene_frames
    ref = ReferenceSet.build(frames[0], Region(*scene.object_box), 4)
    d = dist_series(frames, ref)
    labels = scene.labels()
    off, on = d[labels == 0][5:], d[labels == 1][10:]
    assert on.mean() > 5 * max(np.median(off), 0.05)


def test_by_level_matches_capped_tracking(scene_frames):
    scene, frames = scene_frames
    ref = ReferenceSet.build(frames[0], Region(*scene.object_box), 4)
    sub = frames[50:80:5]
    by = dist_series_by_level(sub, ref)
    for cap in range(5):
        assert np.allclose(by[cap], dist_series(sub, ref, cap))


def test_pyramid_level_saturation(scene_frames):
    scene, frames = scene_frames
    ref = ReferenceSet.build(frames[0], Region(*scene.object_box), 4)
    on = [f for f, lab in zip(frames, scene.labels()) if lab][10::4]
    means = dist_series_by_level(on, ref).mean(axis=1)
    # direction only: deeper pyramids never lose much on-state signal
    assert means[4] >= means[0]


def test_adjacent_mode_is_small_on_state(scene_frames):
    scene, frames = scene_frames
    labels = scene.labels()
    on = [f for f, lab in zip(frames, labels) if lab][20:60]
    ref = ReferenceSet.build(frames[0], Region(*scene.object_box), 4)
    rf = dist_series(on, ref).mean()
    adj = adjacent_dist_series(on, Region(*scene.object_box))[1:].mean()
    assert rf > adj


@given(st.integers(0, 2**32 - 1), st.integers(-4, 4), st.integers(-4, 4))
def test_single_level_oracle_property(seed, dx, dy):
    rng = np.random.default_rng(seed)
    img = textured(rng, (48, 48))
    cur = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
    d, _, ok = lk_at_level(img, cur, (24.0, 24.0))
    if ok:
        assert np.allclose(d, [dx, dy], atol=0.5)


def test_lk_config_window_override(rng):
    img = textured(rng)
    d, _, ok = lk_at_level(img, np.roll(img, 1, axis=0), (32.0, 32.0), w=4)
    assert ok and np.allclose(d, [0, 1], atol=0.1)
    assert LkConfig().window == 7
