"""Synthetic evaluation suite: four background kinds times three camera geometries.

Each case has a training clip (off, then on until the end) and a held-out
clip with the same static layout, new dynamics and three on/off transitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classifier import EvalReport, evaluate
from .imgproc import Region
from .video import BACKGROUND_KINDS, AugmentSpec, Frame, SynthScene, VideoMeta, augment_frames, render_scene

WIDTH, HEIGHT, FPS = 640, 352, 25
TRAIN_FRAMES = 300
TRAIN_ON = [(100, 300)]
HELDOUT_FRAMES = 400
HELDOUT_ON = [(80, 200), (300, 400)]

# box side and top-left corner: near camera, mid-range, far camera (small object)
GEOMETRIES = {
    "near": (64, (400, 170)),
    "medium": (40, (90, 220)),
    "far": (24, (470, 60)),
}

AUGMENTATIONS = {
    "P1": {"row_ratio": [0.0, 1.0], "col_ratio": [0.0, 1.0], "gray_delta": [-80, 80], "snr": [0.01, 0.1]},
    "P2": {"row_ratio": [0.0, 1.0], "col_ratio": [0.0, 1.0], "gray_delta": 40, "snr": [0.01, 0.1]},
    "P3": {"gray_delta": 40, "snr": [0.01, 0.1]},
    "P4": {"gray_delta": 80, "snr": [0.01, 0.1]},
}


@dataclass(frozen=True)
class SuiteCase:
    kind: str
    geometry: str
    layout_seed: int

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.geometry}"

    @property
    def box(self) -> tuple[int, int, int, int]:
        side, (x, y) = GEOMETRIES[self.geometry]
        return (x, y, side, side)

    def training(self, seed: int = 1) -> SynthScene:
        return SynthScene(VideoMeta(WIDTH, HEIGHT, FPS, TRAIN_FRAMES), self.box, list(TRAIN_ON),
                          self.kind, seed=seed, layout_seed=self.layout_seed)

    def heldout(self, seed: int = 101) -> SynthScene:
        return SynthScene(VideoMeta(WIDTH, HEIGHT, FPS, HELDOUT_FRAMES), self.box, list(HELDOUT_ON),
                          self.kind, seed=seed, layout_seed=self.layout_seed)

    def augment_box(self) -> tuple[int, int, int, int]:
        """Window of twice the object area, centred on the object."""
        return Region(*self.box).scaled(math.sqrt(2.0), WIDTH, HEIGHT).box


def cases() -> list[SuiteCase]:
    out = []
    for i, kind in enumerate(BACKGROUND_KINDS):
        for j, geometry in enumerate(GEOMETRIES):
            out.append(SuiteCase(kind, geometry, layout_seed=100 + 10 * i + j))
    return out


def augmentation(name: str, case: SuiteCase, seed: int) -> AugmentSpec:
    return AugmentSpec.from_dict(dict(AUGMENTATIONS[name], seed=seed, box=list(case.augment_box()),
                                      apply_to_reference=True))


def render(scene: SynthScene, aug: AugmentSpec | None = None) -> list[Frame]:
    frames = render_scene(scene)
    if aug is not None:
        frames = augment_frames(frames, aug)
    return list(frames)


def transitions(on_intervals, frame_count: int) -> list[int]:
    out = []
    for a, b in on_intervals:
        if a > 0:
            out.append(a)
        if b < frame_count:
            out.append(b)
    return out


def steady_mask(labels: np.ndarray, on_intervals, margin: int) -> np.ndarray:
    """True for frames farther than ``margin`` from every transition."""
    keep = np.ones(labels.shape[0], dtype=bool)
    for t in transitions(on_intervals, labels.shape[0]):
        keep[max(0, t - margin):t + margin + 1] = False
    return keep


def steady_report(pred, scene: SynthScene, margin: int) -> EvalReport:
    truth = scene.labels()
    keep = steady_mask(truth, scene.on_intervals, margin)
    return evaluate(np.asarray(pred)[keep], truth[keep])


BENCH_RESOLUTIONS = [(640, 352), (1280, 720), (1920, 1080)]


def bench_scene(width: int, height: int, frames: int = 120, seed: int = 5) -> SynthScene:
    """Medium-geometry ripple scene scaled to ``width`` x ``height``; on for the last two thirds."""
    side, (x, y) = GEOMETRIES["medium"]
    fx, fy = width / WIDTH, height / HEIGHT
    box = (int(x * fx), int(y * fy), int(side * fy), int(side * fy))
    return SynthScene(VideoMeta(width, height, FPS, frames), box, [(frames // 3, frames)],
                      "ripple", seed=seed, layout_seed=seed)
