import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from aerowatch.video import (AugmentSpec, Frame, SynthScene, VideoCorruptError, VideoFormatError,
                             VideoMeta, apply_gray_shift, apply_salt_pepper, augment_frames,
                             augment_video, band_mask, load_video, read_header, read_labels,
                             read_video, render_scene, synth_scene, write_video)

from conftest import small_scene


def _frames(meta, seed=0):
    rng = np.random.default_rng(seed)
    return [Frame(rng.integers(0, 256, meta.shape, dtype=np.uint8), i) for i in range(meta.frame_count)]


def test_round_trip(tmp_path):
    meta = VideoMeta(64, 48, 25, 10)
    frames = _frames(meta)
    write_video(meta, frames, tmp_path / "a.rgv")
    assert (tmp_path / "a.rgv").stat().st_size == 18 + 10 * 3072
    meta2, back = load_video(tmp_path / "a.rgv")
    assert meta2 == meta
    assert len(back) == 10
    for a, b in zip(frames, back):
        assert np.array_equal(a.pixels, b.pixels)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.rgv"
    p.write_bytes(b"XXXX" + bytes(14))
    with pytest.raises(VideoFormatError):
        read_video(p)


def test_truncated_payload_reports_offset(tmp_path):
    meta = VideoMeta(64, 48, 25, 10)
    p = tmp_path / "a.rgv"
    write_video(meta, _frames(meta), p)
    p.write_bytes(p.read_bytes()[:18 + 9 * 3072 + 100])
    _, frames = read_video(p)
    with pytest.raises(VideoCorruptError) as err:
        list(frames)
    assert err.value.offset == 18 + 9 * 3072 + 100  # end of the readable data


def test_empty_video(tmp_path):
    meta = VideoMeta(8, 8, 25, 0)
    write_video(meta, [], tmp_path / "e.rgv")
    meta2, frames = load_video(tmp_path / "e.rgv")
    assert meta2.frame_count == 0 and frames == []


def test_wrong_frame_size(tmp_path):
    meta = VideoMeta(8, 8, 25, 1)
    with pytest.raises(ValueError):
        write_video(meta, [np.zeros((8, 9), np.uint8)], tmp_path / "w.rgv")
    assert not (tmp_path / "w.rgv").exists()


@given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 12), st.integers(1, 12))))
def test_round_trip_property(stack):
    n, h, w = stack.shape
    meta = VideoMeta(w, h, 30, n)
    buf = io.BytesIO()
    from aerowatch.video import iter_frames, write_header
    write_header(buf, meta)
    buf.write(stack.tobytes())
    buf.seek(0)
    meta2 = read_header(buf)
    back = np.stack([f.pixels for f in iter_frames(buf, meta2)])
    assert np.array_equal(back, stack)


@pytest.mark.parametrize("p, v, out", [(200, 80, 255), (30, -80, 0), (100, 40, 140)])
def test_gray_shift_examples(p, v, out):
    f = Frame(np.full((4, 4), p, np.uint8), 0)
    assert np.all(apply_gray_shift(f, v).pixels == out)


@given(arrays(np.uint8, (6, 7)), st.integers(-255, 255))
def test_gray_shift_monotone_clamped(px, v):
    out = apply_gray_shift(Frame(px, 0), v).pixels.astype(int)
    assert np.array_equal(out, np.clip(px.astype(int) + v, 0, 255))
    assert np.array_equal(apply_gray_shift(Frame(px, 0), 0).pixels, px)


def test_gray_shift_mask():
    f = Frame(np.full((4, 4), 100, np.uint8), 0)
    mask = band_mask((4, 4), 0.5, 1.0)
    out = apply_gray_shift(f, 10, mask).pixels
    assert np.all(out[:2] == 110) and np.all(out[2:] == 100)


def test_salt_pepper_count():
    px = np.full((100, 100), 128, np.uint8)
    out = apply_salt_pepper(Frame(px, 0), 0.04, seed=3).pixels
    changed = out != px
    assert changed.sum() == 400
    assert set(np.unique(out[changed])) <= {0, 255}


def test_salt_pepper_identity_and_determinism():
    px = np.random.default_rng(0).integers(1, 255, (20, 20), dtype=np.uint8)
    assert np.array_equal(apply_salt_pepper(Frame(px, 0), 0.0).pixels, px)
    a = apply_salt_pepper(Frame(px, 0), 0.1, seed=5).pixels
    b = apply_salt_pepper(Frame(px, 0), 0.1, seed=5).pixels
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        apply_salt_pepper(Frame(px, 0), 0.7)


@given(st.floats(0, 0.5), st.integers(1, 30), st.integers(1, 30))
def test_salt_pepper_count_property(snr, h, w):
    px = np.full((h, w), 128, np.uint8)
    mask = band_mask((h, w), 1.0, 0.5)
    out = apply_salt_pepper(Frame(px, 0), snr, mask, seed=0).pixels
    assert (out != px).sum() == int(round(snr * mask.sum()))
    assert np.all(out[~mask] == 128)


def test_band_mask_in_box():
    m = band_mask((10, 10), 0.5, 0.5, box=(2, 2, 4, 6))
    ys, xs = np.nonzero(m)
    assert m.sum() == 3 * 2
    assert ys.min() == 2 and xs.min() == 2


def test_augment_p3_style():
    meta = VideoMeta(16, 12, 25, 3)
    frames = [Frame(np.full(meta.shape, 100, np.uint8), i) for i in range(3)]
    spec = AugmentSpec(gray_delta=40, snr=(0.01, 0.1), seed=9)
    for f in augment_frames(frames, spec):
        px = f.pixels
        noise = (px == 0) | (px == 255)
        assert np.all(px[~noise] == 140)
        assert 0.01 * px.size - 1 <= noise.sum() <= 0.1 * px.size + 1


def test_augment_identity_video(tmp_path):
    scene = small_scene(frames=5, on=())
    synth_scene(scene, tmp_path / "s.rgv")
    augment_video(tmp_path / "s.rgv", AugmentSpec(), tmp_path / "o.rgv")
    assert (tmp_path / "s.rgv").read_bytes() == (tmp_path / "o.rgv").read_bytes()


def test_augment_reference_flag():
    meta = VideoMeta(8, 8, 25, 2)
    frames = [Frame(np.full(meta.shape, 100, np.uint8), i) for i in range(2)]
    out = list(augment_frames(frames, AugmentSpec(gray_delta=20, apply_to_reference=False)))
    assert np.all(out[0].pixels == 100) and np.all(out[1].pixels == 120)


def test_augment_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(row_ratio=1.5)
    with pytest.raises(ValueError):
        AugmentSpec(snr=(0.2, 0.1))


def test_synth_labels(tmp_path):
    scene = small_scene(frames=30, on=((10, 20),))
    synth_scene(scene, tmp_path / "s.rgv")
    truth = json.loads((tmp_path / "s.labels.json").read_text())
    assert truth["on_intervals"] == [[10, 20]] and truth["object_box"] == [150, 110, 32, 32]
    labels = read_labels(tmp_path / "s.labels.json", 30)
    assert labels[:10].sum() == 0 and labels[10:20].all() and labels[20:].sum() == 0


def test_synth_box_out_of_bounds():
    with pytest.raises(ValueError):
        SynthScene(VideoMeta(64, 48, 25, 10), (50, 10, 32, 32))


def test_synth_deterministic_and_layout_shared():
    a = [f.pixels for f in render_scene(small_scene(frames=4, seed=1, on=()))]
    b = [f.pixels for f in render_scene(small_scene(frames=4, seed=1, on=()))]
    c = [f.pixels for f in render_scene(small_scene(frames=4, seed=2, on=()))]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    # same layout, different dynamics: the off-state machine looks the same
    x, y, w, h = 150, 110, 32, 32
    diff = np.abs(a[0][y:y + h, x:x + w].astype(int) - c[0][y:y + h, x:x + w]).mean()
    assert diff < 4


def test_jitter_translation_bounded():
    scene = small_scene("jitter", frames=20, on=())
    frames = [f.pixels.astype(float) for f in render_scene(scene)]
    ref = frames[0][20:-20, 20:-20]
    for f in frames[1:]:
        errs = {(dx, dy): np.abs(f[20 + dy:f.shape[0] - 20 + dy, 20 + dx:f.shape[1] - 20 + dx] - ref).mean()
                for dx in range(-4, 5) for dy in range(-4, 5)}
        dx, dy = min(errs, key=errs.get)
        assert max(abs(dx), abs(dy)) <= 2 * scene.jitter_px


def test_pedestrian_never_enters_box():
    scene = small_scene("pedestrian", frames=150, on=())
    still = small_scene("flat", frames=150, on=())
    x, y, w, h = scene.object_box
    for a, b in zip(render_scene(scene), render_scene(still)):
        moving = np.abs(a.pixels.astype(int) - b.pixels) > 30
        assert not moving[y:y + h, x:x + w].any()


def test_spray_changes_object_region(scene_frames):
    scene, frames = scene_frames
    x, y, w, h = scene.object_box
    off = frames[30][y:y + h, x:x + w].astype(float)
    on = frames[120][y:y + h, x:x + w].astype(float)
    assert on.mean() > off.mean() + 30
