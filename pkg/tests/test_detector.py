import json
import logging

import numpy as np
import pytest

from aerowatch.detector import (DetectorModel, ImbalanceError, NoMotionError, StreamingDetector,
                                TrainOptions, detect, dumps_models, loads_models, majority_blocks,
                                train)
from aerowatch.imgproc import Region, iou
from aerowatch.video import VideoMeta, render_scene

from conftest import small_scene


@pytest.fixture(scope="module")
def trained(scene_frames):
    scene, frames = scene_frames
    model, report = train(frames, scene.meta, TrainOptions())
    return scene, frames, model, report


def test_train_finds_region_and_labels(trained):
    scene, frames, model, report = trained
    assert iou(model.region.box, scene.object_box) >= 0.5
    assert 0.2 <= report.balance_ratio <= 5
    assert report.class_coefficient < 0.1
    assert report.cross_validation["fold_mean"] >= 0.95
    assert any("10-20 s" in w for w in report.warnings)
    assert all(model.region.contains(c.x, c.y) for c in model.reference_corners)


def test_detect_on_training_clip(trained):
    scene, frames, model, _ = trained
    pred = np.array([d.state for d in detect([model], scene.meta, frames)])
    truth = scene.labels()
    keep = np.ones(len(truth), bool)
    keep[60 - 25:60 + 26] = False
    assert (pred[keep] == truth[keep]).mean() >= 0.99


def test_all_off_stream(trained):
    scene, _, model, _ = trained
    off = small_scene(seed=9, frames=80, on=())
    assert all(d.state == 0 for d in detect([model], off.meta, render_scene(off)))


def test_model_round_trip_and_multi(trained):
    scene, frames, model, _ = trained
    text = dumps_models([model, model])
    back = loads_models(text)
    assert dumps_models(back) == text
    a = [d.to_json() for d in detect([model], scene.meta, frames[:60])]
    b = [d.to_json() for d in detect(back[:1], scene.meta, frames[:60])]
    assert a == b
    both = list(detect(back, scene.meta, frames[:3]))
    assert [d.model for d in both] == [0, 1] * 3
    with pytest.raises(ValueError):
        loads_models(json.dumps({"version": 99, "models": []}))


def test_streaming_equals_batch(trained):
    scene, frames, model, _ = trained
    batch = [d.to_json() for d in detect([model], scene.meta, frames)]
    det = StreamingDetector(model)
    chunked = []
    for start in range(0, len(frames), 17):
        for i, f in enumerate(frames[start:start + 17]):
            chunked.append(det.push(f, start + i).to_json())
    assert chunked == batch


def test_detection_time(trained):
    scene, frames, model, _ = trained
    d = list(detect([model], scene.meta, frames[:30]))[-1]
    assert d.time_s == pytest.approx(d.frame_index / scene.meta.fps)


def test_dimension_mismatch(trained):
    from aerowatch.detector import DimensionMismatchError
    _, _, model, _ = trained
    with pytest.raises(DimensionMismatchError):
        list(detect([model], VideoMeta(64, 48, 25, 1), [np.zeros((48, 64), np.uint8)]))


def test_drift_warning(trained, caplog):
    scene, frames, model, _ = trained
    det = StreamingDetector(model)
    with caplog.at_level(logging.WARNING):
        for t, f in enumerate(frames[:40]):
            det.push(f, t)
        assert not det.drift_warned
        # the spray alone is not drift
        for t, f in enumerate(frames[100:140]):
            det.push(f, 100 + t)
        assert not det.drift_warned
        for t, f in enumerate(frames[:20]):
            det.push(np.clip(f.astype(int) + 90, 0, 255).astype(np.uint8), t)
    assert det.drift_warned
    assert sum("drifted" in r.message for r in caplog.records) == 1


def test_corners_must_lie_in_region(trained):
    _, _, model, _ = trained
    d = model.to_dict()
    d["reference_corners"] = [[0.0, 0.0, 1.0]]
    with pytest.raises(ValueError):
        DetectorModel.from_dict(d)


def test_no_motion():
    scene = small_scene(frames=60, on=())
    with pytest.raises(NoMotionError):
        train(list(render_scene(scene)), scene.meta)


def test_imbalance():
    scene = small_scene(frames=150, on=((100, 103),))
    frames = [f.pixels for f in render_scene(scene)]
    with pytest.raises(ImbalanceError) as err:
        train(frames, scene.meta, TrainOptions(region=Region(*scene.object_box)))
    assert err.value.ratio < 0.2


def test_majority_blocks(trained):
    scene, frames, model, _ = trained
    dets = list(detect([model], scene.meta, frames))
    blocks = majority_blocks(dets, 25)
    assert len(blocks) == 8
    assert blocks[0]["state"] == 0 and blocks[-1]["state"] == 1
    assert sum(b["frames"] for b in blocks) == len(frames)


def test_created_at_pinned(monkeypatch):
    from aerowatch.detector import _created_at
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert _created_at() == "1970-01-01T00:00:00Z"
