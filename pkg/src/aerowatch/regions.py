"""Object-region detection: per-frame largest motion blob, candidate filtering,
then the candidate whose Dist/EWMA clusters separate best.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .background import MixtureModel
from .features import (DegenerateClusteringError, EwmaParams, balance_check, build_dataset,
                       is_balanced, kmeans2)
from .imgproc import Blob, Region, gaussian5x5, iou, largest_blob, morph_open_close, threshold_binary
from .rfklt import LkConfig, ReferenceSet, dist_series_by_level

MASK_THRESHOLD = 240
DEFAULT_WARMUP = 2
APPEAR_IOU = 0.5


class UntrackableCandidatesError(ValueError):
    pass


@dataclass
class CandidateScore:
    region: Region
    f_value: float
    cent_feature: float = 0.0
    diffs: list[float] = field(default_factory=list)
    n_corners: int = 0
    balanced: bool = False

    def to_dict(self) -> dict:
        return {"region": self.region.to_dict(), "f_value": self.f_value,
                "cent_feature": self.cent_feature, "diffs": list(self.diffs),
                "n_corners": self.n_corners, "balanced": self.balanced}


def foreground_mask(frame: np.ndarray, bg: MixtureModel) -> np.ndarray:
    """Blur, update the mixture, threshold and clean up: {0, 255} uint8."""
    mask = bg.apply(gaussian5x5(frame))
    return morph_open_close(threshold_binary(mask, MASK_THRESHOLD))


def max_contours(frames, bg: MixtureModel | None = None,
                 warmup: int = DEFAULT_WARMUP) -> list[tuple[int, Blob]]:
    """Largest foreground blob of every frame after the first ``warmup`` frames.

    The mixture is still updated during warm-up; only the masks are ignored
    (the very first mask is the whole frame).
    """
    bg = bg if bg is not None else MixtureModel()
    out = []
    n = 0
    for t, frame in enumerate(frames):
        n += 1
        pixels = getattr(frame, "pixels", frame)
        mask = foreground_mask(pixels, bg)
        if t < warmup:
            continue
        blob = largest_blob(mask)
        if blob is not None:
            out.append((t, blob))
    if n == 0:
        raise ValueError("empty video")
    return out


def f_feature(key: np.ndarray, reference: np.ndarray, region: Region, area: int) -> float:
    """Summed gray difference key - reference over the box, per blob pixel."""
    x, y, w, h = region.box
    diff = key[y:y + h, x:x + w].astype(np.float64) - reference[y:y + h, x:x + w]
    return float(diff.sum() / max(area, 1))


def _region_of(t: int, blob: Blob) -> Region:
    b = blob.bbox
    return Region(b.x, b.y, b.w, b.h, blob.area, blob.centroid, t)


def spacing_filter(regions: list[Region], min_spacing: float) -> list[Region]:
    """Greedy suppression in descending area: drop regions whose centroid is
    closer than ``min_spacing`` to one already kept."""
    kept: list[Region] = []
    for r in sorted(regions, key=lambda r: -r.area):
        cx, cy = r.centroid
        if all(math.hypot(cx - k.centroid[0], cy - k.centroid[1]) >= min_spacing for k in kept):
            kept.append(r)
    return kept


def select_candidates(contours: list[tuple[int, Blob]], frames, reference: np.ndarray,
                      scores: list[CandidateScore] | None = None) -> list[Region]:
    """Top quarter by area, centroid-spacing suppression, then F >= mean F.

    ``frames`` must be indexable by frame index (the key frames are read from
    it). When ``scores`` is a list it receives one entry per survivor.
    """
    if not contours:
        return []
    reference = np.asarray(getattr(reference, "pixels", reference))
    height, width = reference.shape
    # stable sort keeps the earliest frame first among equal areas
    ordered = sorted(contours, key=lambda tb: -tb[1].area)
    top = ordered[:max(1, math.ceil(len(ordered) / 4))]
    regions = spacing_filter([_region_of(t, b) for t, b in top], min(width, height) / 10.0)
    f_values = []
    for r in regions:
        key = np.asarray(getattr(frames[r.key_frame_index], "pixels", frames[r.key_frame_index]))
        f_values.append(f_feature(key, reference, r, r.area))
    mean_f = float(np.mean(f_values))
    out = []
    for r, f in zip(regions, f_values):
        if f >= mean_f:
            out.append(r)
            if scores is not None:
                scores.append(CandidateScore(r, f))
    return out


def cent_feature(diffs) -> float:
    """Pyramid-weighted centroid gap: sum of Diff_i / 2**i."""
    return float(sum(d / (1 << i) for i, d in enumerate(diffs)))


def score_candidate(region: Region, frames, reference: np.ndarray, ewma: EwmaParams,
                    levels: int = 4, config: LkConfig | None = None,
                    seed: int = 42) -> tuple[float, list[float], int, bool]:
    """(CentFeature, per-cap Diff values, number of corners, balanced) for one region.

    ``balanced`` tells whether the two clusters at the full pyramid depth pass
    the on/off balance check that training applies later.
    """
    ref = ReferenceSet.build(reference, region, levels, config)
    if not ref.corners:
        return 0.0, [0.0] * (levels + 1), 0, False
    pixels = [np.asarray(getattr(f, "pixels", f)) for f in frames]
    by_level = dist_series_by_level(pixels, ref)
    diffs = []
    balanced = False
    for cap in range(levels + 1):
        try:
            km = kmeans2(build_dataset(by_level[cap], ewma), seed=seed)
        except DegenerateClusteringError:
            diffs.append(0.0)
            continue
        diffs.append(float(abs(km.centroids[1, 0] - km.centroids[0, 0])))
        if cap == levels:
            balanced = is_balanced(balance_check(km.labels))
    return cent_feature(diffs), diffs, len(ref.corners), balanced


def pick_object_region(candidates: list[Region], frames, reference: np.ndarray,
                       ewma: EwmaParams, levels: int = 4, config: LkConfig | None = None,
                       seed: int = 42, scores: list[CandidateScore] | None = None) -> Region:
    """Candidate with the largest CentFeature; the first one wins ties.

    Candidates whose clusters fail the balance check (a short passer-by, say)
    are only chosen when no balanced candidate exists.
    """
    if not candidates:
        raise ValueError("no candidate regions")
    reference = np.asarray(getattr(reference, "pixels", reference))
    if len(candidates) == 1 and scores is None:
        return candidates[0]
    by_region = {id(s.region): s for s in (scores or [])}
    best: dict[bool, tuple[Region | None, float]] = {True: (None, -1.0), False: (None, -1.0)}
    tracked = 0
    for r in candidates:
        cf, diffs, n_corners, balanced = score_candidate(r, frames, reference, ewma, levels,
                                                         config, seed)
        s = by_region.get(id(r))
        if s is None and scores is not None:
            s = CandidateScore(r, float("nan"))
            scores.append(s)
        if s is not None:
            s.cent_feature, s.diffs, s.n_corners, s.balanced = cf, diffs, n_corners, balanced
        if n_corners:
            tracked += 1
            if cf > best[balanced][1]:
                best[balanced] = (r, cf)
    if len(candidates) == 1:
        return candidates[0]
    if tracked == 0:
        raise UntrackableCandidatesError("untrackable candidates: no corners in any candidate region")
    return best[True][0] if best[True][0] is not None else best[False][0]


@dataclass
class RegionReport:
    region: Region | None
    candidates: list[CandidateScore]
    n_contours: int
    timings: dict[str, float]
    appear_frame: int | None = None

    def to_dict(self) -> dict:
        ranked = sorted(self.candidates, key=lambda s: -s.cent_feature)
        return {"region": None if self.region is None else self.region.to_dict(),
                "n_contours": self.n_contours,
                "appear_frame": self.appear_frame,
                "candidates": [s.to_dict() for s in ranked],
                "timings_s": dict(self.timings)}


def detect_region(frames, reference_index: int = 0, ewma: EwmaParams | None = None,
                  levels: int = 4, bg: MixtureModel | None = None,
                  config: LkConfig | None = None, seed: int = 42,
                  fps: float = 25.0) -> RegionReport:
    """Full three-step search over an in-memory clip.

    Timings: ``contours`` (background model + blobs), ``candidates``
    (area/spacing/F filters), ``selection`` (CentFeature over candidates).
    """
    pixels = [np.asarray(getattr(f, "pixels", f)) for f in frames]
    if not pixels:
        raise ValueError("empty video")
    ewma = ewma or EwmaParams.from_fps(fps)
    reference = pixels[reference_index]
    t0 = time.perf_counter()
    contours = max_contours(pixels, bg)
    t1 = time.perf_counter()
    scores: list[CandidateScore] = []
    candidates = select_candidates(contours, pixels, reference, scores)
    t2 = time.perf_counter()
    region = None
    if candidates:
        region = pick_object_region(candidates, pixels, reference, ewma, levels, config, seed, scores)
    t3 = time.perf_counter()
    appear = None
    if region is not None:
        # first frame whose largest blob substantially covers the chosen region
        hits = [t for t, b in contours if iou(b.bbox.box, region.box) >= APPEAR_IOU]
        appear = min(hits) if hits else region.key_frame_index
    return RegionReport(region, scores, len(contours),
                        {"contours": t1 - t0, "candidates": t2 - t1, "selection": t3 - t2}, appear)
