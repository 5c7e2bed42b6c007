"""Trained detector: model persistence, training over a clip, streaming detection."""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .background import AgmmConfig, MixtureModel
from .classifier import LinearModel, cross_validate, svm_train
from .features import (EwmaParams, EwmaStream, balance_check, build_dataset, class_coefficient,
                       is_balanced, kmeans2, label_by_origin)
from .imgproc import Corner, Region
from .regions import detect_region
from .rfklt import LkConfig, ReferenceSet, dist_feature, dist_series, track_pyramidal
from .video import VideoMeta

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DRIFT_LIMIT = 80.0
DRIFT_STRIDE = 4


class NoMotionError(RuntimeError):
    pass


class ImbalanceError(RuntimeError):
    def __init__(self, ratio: float):
        super().__init__(f"imbalanced states: on/off ratio {ratio:.4g} outside [0.2, 5]")
        self.ratio = ratio


class DimensionMismatchError(ValueError):
    pass


def _created_at() -> str:
    # honour SOURCE_DATE_EPOCH so that repeated runs produce identical files
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    ts = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class DetectorModel:
    region: Region
    reference_frame: np.ndarray
    reference_corners: list[Corner]
    ewma: EwmaParams
    svm: LinearModel
    meta: VideoMeta
    levels: int = 4
    lk: LkConfig = field(default_factory=LkConfig)
    created_at: str = ""

    def __post_init__(self):
        for c in self.reference_corners:
            if not self.region.contains(c.x, c.y):
                raise ValueError(f"corner ({c.x}, {c.y}) outside region {self.region.box}")
        if self.reference_frame.shape != self.meta.shape:
            raise ValueError("reference frame does not match video dimensions")

    def reference_set(self) -> ReferenceSet:
        return ReferenceSet.build(self.reference_frame, self.region, self.levels, self.lk,
                                  corners=self.reference_corners)

    def to_dict(self) -> dict:
        ref = np.ascontiguousarray(self.reference_frame, dtype=np.uint8)
        return {
            "region": self.region.to_dict(),
            "reference_frame": base64.b64encode(ref.tobytes()).decode("ascii"),
            "reference_corners": [[c.x, c.y, c.score] for c in self.reference_corners],
            "ewma": {"alpha": self.ewma.alpha, "window": self.ewma.window},
            "svm": self.svm.to_dict(),
            "meta": {"width": self.meta.width, "height": self.meta.height,
                     "fps": self.meta.fps, "frame_count": self.meta.frame_count},
            "levels": self.levels,
            "lk": dict(self.lk.__dict__),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        meta = VideoMeta(**d["meta"])
        raw = base64.b64decode(d["reference_frame"])
        ref = np.frombuffer(raw, dtype=np.uint8).reshape(meta.shape).copy()
        return cls(Region.from_dict(d["region"]), ref,
                   [Corner(float(x), float(y), float(s)) for x, y, s in d["reference_corners"]],
                   EwmaParams(float(d["ewma"]["alpha"]), int(d["ewma"]["window"])),
                   LinearModel.from_dict(d["svm"]), meta, int(d["levels"]),
                   LkConfig(**d["lk"]), d.get("created_at", ""))


def dumps_models(models: list[DetectorModel]) -> str:
    return json.dumps({"version": MODEL_FORMAT_VERSION, "models": [m.to_dict() for m in models]},
                      sort_keys=True) + "\n"


def loads_models(text: str) -> list[DetectorModel]:
    doc = json.loads(text)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    return [DetectorModel.from_dict(m) for m in doc["models"]]


# ----------------------------------------------------------------- training


@dataclass
class TrainOptions:
    levels: int = 4
    window: int | None = None      # EWMA window in frames; defaults to fps
    seed: int = 42
    folds: int = 5
    c: float = 1.0
    reference_index: int = 0
    region: Region | None = None   # skip region search when given
    agmm: AgmmConfig = field(default_factory=AgmmConfig)
    lk: LkConfig = field(default_factory=LkConfig)


@dataclass
class TrainReport:
    region: dict | None
    region_search: dict | None
    balance_ratio: float
    class_coefficient: float
    appear_frame: int
    cross_validation: dict
    n_corners: int
    timings: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train(frames, meta: VideoMeta, options: TrainOptions | None = None
          ) -> tuple[DetectorModel, TrainReport]:
    """Find the object region (unless given), then fit the state classifier."""
    opts = options or TrainOptions()
    pixels = [np.asarray(getattr(f, "pixels", f)) for f in frames]
    warnings = []
    seconds = len(pixels) / meta.fps
    if not 10.0 <= seconds <= 20.0:
        warnings.append(f"training clip lasts {seconds:.1f} s; 10-20 s is recommended")
    ewma = EwmaParams.from_fps(meta.fps, opts.window)
    reference = pixels[opts.reference_index]
    timings = {}

    report = None
    if opts.region is None:
        report = detect_region(pixels, opts.reference_index, ewma, opts.levels,
                               MixtureModel(opts.agmm), opts.lk, opts.seed)
        timings.update(report.timings)
        if report.region is None:
            raise NoMotionError("no motion: no candidate regions found")
        region = report.region
    else:
        region = opts.region

    t0 = time.perf_counter()
    ref = ReferenceSet.build(reference, region, opts.levels, opts.lk)
    series = dist_series(pixels, ref)
    points = build_dataset(series, ewma)
    km = kmeans2(points, seed=opts.seed)
    labels = label_by_origin(km.labels, km.centroids)
    ratio = balance_check(labels)
    if not is_balanced(ratio):
        raise ImbalanceError(ratio)
    svm = svm_train(points, labels, c=opts.c, seed=opts.seed)
    try:
        cv = cross_validate(points, labels, opts.folds, opts.seed, opts.c).to_dict()
    except ValueError as exc:
        cv = {"error": str(exc)}
    timings["state_training"] = time.perf_counter() - t0

    if report is not None and report.appear_frame is not None:
        appear = report.appear_frame
    else:
        on = np.flatnonzero(labels == 1)
        appear = int(on[0]) if on.size else len(labels)
    model = DetectorModel(region, reference.copy(), list(ref.corners), ewma, svm, meta,
                          opts.levels, opts.lk, _created_at())
    train_report = TrainReport(
        region=region.to_dict(),
        region_search=None if report is None else report.to_dict(),
        balance_ratio=ratio,
        class_coefficient=class_coefficient(labels, appear, len(labels)),
        appear_frame=appear,
        cross_validation=cv,
        n_corners=len(ref.corners),
        timings=timings,
        warnings=warnings,
    )
    return model, train_report


# ---------------------------------------------------------------- detection


@dataclass
class Detection:
    frame_index: int
    time_s: float
    dist: float
    ewma: float
    state: int
    margin: float
    model: int = 0

    def to_json(self) -> str:
        return json.dumps({"frame": self.frame_index, "time_s": self.time_s, "dist": self.dist,
                           "ewma": self.ewma, "state": self.state, "margin": self.margin,
                           "model": self.model})


class StreamingDetector:
    """Per-frame state for one model; feed frames in order."""

    def __init__(self, model: DetectorModel, index: int = 0):
        self.model = model
        self.index = index
        self.ref = model.reference_set()
        self.ewma = EwmaStream(model.ewma)
        # scene brightness is sampled on a 4-px grid, outside the object region
        # so that the spray itself never counts as drift
        x, y, w, h = model.region.box
        keep = np.ones(model.meta.shape, dtype=bool)
        keep[y:y + h, x:x + w] = False
        self._drift_mask = keep[::DRIFT_STRIDE, ::DRIFT_STRIDE]
        self._ref_mean = self._scene_mean(model.reference_frame)
        self.drift_warned = False

    def _scene_mean(self, pixels: np.ndarray) -> float:
        sample = pixels[::DRIFT_STRIDE, ::DRIFT_STRIDE]
        return float(sample[self._drift_mask].mean()) if self._drift_mask.any() else float(sample.mean())

    def check(self, meta: VideoMeta):
        if meta.shape != self.model.meta.shape:
            raise DimensionMismatchError(
                f"model expects {self.model.meta.width}x{self.model.meta.height}, "
                f"stream is {meta.width}x{meta.height}")

    def push(self, pixels: np.ndarray, frame_index: int) -> Detection:
        if pixels.shape != self.model.meta.shape:
            raise DimensionMismatchError(f"frame shape {pixels.shape} != {self.model.meta.shape}")
        d = dist_feature(track_pyramidal(self.ref, pixels))
        e = self.ewma.push(d)
        margin = float(self.model.svm.decision(np.array([[d, e]]))[0])
        state = 1 if margin > 0 else 0
        if not self.drift_warned:
            drift = self._scene_mean(pixels) - self._ref_mean
            if abs(drift) >= DRIFT_LIMIT:
                log.warning("scene brightness drifted by %.0f gray levels; consider retraining", drift)
                self.drift_warned = True
        return Detection(frame_index, frame_index / self.model.meta.fps, d, e, state, margin,
                         self.index)


def detect(models: list[DetectorModel], meta: VideoMeta, frames):
    """Yield one Detection per model per frame."""
    detectors = [StreamingDetector(m, i) for i, m in enumerate(models)]
    for det in detectors:
        det.check(meta)
    for t, frame in enumerate(frames):
        pixels = np.asarray(getattr(frame, "pixels", frame))
        index = getattr(frame, "index", t)
        for det in detectors:
            yield det.push(pixels, index)


def bench_detect(models: list[DetectorModel], pixels: list[np.ndarray], repeat: int = 1) -> dict:
    """Per-frame wall-clock of the detect path over in-memory frames."""
    if not pixels:
        raise ValueError("no frames to time")
    # untimed warm-up so that compilation and cache loading stay out of the numbers
    for m in models:
        StreamingDetector(m).push(pixels[0], 0)
    detectors = [StreamingDetector(m, i) for i, m in enumerate(models)]
    times = np.empty(len(pixels) * repeat)
    k = 0
    for _ in range(repeat):
        for d in detectors:
            d.ewma.reset()
        for i, px in enumerate(pixels):
            t0 = time.perf_counter()
            for d in detectors:
                d.push(px, i)
            times[k] = time.perf_counter() - t0
            k += 1
    ms = times * 1e3
    h, w = pixels[0].shape
    return {"resolution": f"{h}x{w}", "frames": int(times.size),
            "fps": float(times.size / times.sum()),
            "ms_p50": float(np.percentile(ms, 50)), "ms_p90": float(np.percentile(ms, 90)),
            "ms_p99": float(np.percentile(ms, 99)), "ms_max": float(ms.max())}


def majority_blocks(detections: list[Detection], block: int) -> list[dict]:
    """Collapse consecutive detections (one model) into blocks of ``block`` frames."""
    out = []
    for start in range(0, len(detections), block):
        chunk = detections[start:start + block]
        votes = sum(d.state for d in chunk)
        out.append({"frame_start": chunk[0].frame_index, "frame_end": chunk[-1].frame_index,
                    "time_s": chunk[0].time_s, "state": 1 if 2 * votes > len(chunk) else 0,
                    "votes_on": votes, "frames": len(chunk), "model": chunk[0].model})
    return out
