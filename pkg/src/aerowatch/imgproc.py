"""Pixel primitives: smoothing, thresholding, morphology, blobs, pyramids, corners.

Images are plain 2-D numpy arrays. Filters return float64; use
:func:`to_uint8` to go back to 8-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MAX_PYRAMID_LEVEL = 4
MIN_TOP_LEVEL = 16


@dataclass(frozen=True)
class Region:
    """Axis-aligned box. ``area`` is the blob pixel count, not w*h."""

    x: int
    y: int
    w: int
    h: int
    area: int = 0
    centroid: tuple[float, float] = (0.0, 0.0)
    key_frame_index: int = -1

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w - 1 and self.y <= py <= self.y + self.h - 1

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def scaled(self, factor: float, width: int, height: int) -> "Region":
        """Same center, sides multiplied by ``factor``, clipped to the frame."""
        cx, cy = self.center
        w = self.w * factor
        h = self.h * factor
        x0 = max(0, int(round(cx - (w - 1) / 2.0)))
        y0 = max(0, int(round(cy - (h - 1) / 2.0)))
        x1 = min(width, int(round(cx + (w - 1) / 2.0)) + 1)
        y1 = min(height, int(round(cy + (h - 1) / 2.0)) + 1)
        return Region(x0, y0, x1 - x0, y1 - y0, self.area, self.centroid, self.key_frame_index)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "area": self.area,
                "centroid": list(self.centroid), "key_frame_index": self.key_frame_index}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]), int(d.get("area", 0)),
                   tuple(float(v) for v in d.get("centroid", (0.0, 0.0))),
                   int(d.get("key_frame_index", -1)))


def iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


@dataclass(frozen=True)
class Blob:
    area: int
    centroid: tuple[float, float]
    bbox: Region


@dataclass(frozen=True)
class Corner:
    x: float
    y: float
    score: float


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to [0, 255]."""
    a = np.asarray(img, dtype=np.float64)
    r = np.sign(a) * np.floor(np.abs(a) + 0.5)
    return np.clip(r, 0, 255).astype(np.uint8)


def gaussian5x5(img: np.ndarray) -> np.ndarray:
    """Separable (1,4,6,4,1)/16 blur with replicated borders."""
    img = np.asarray(img)
    if img.ndim != 2 or min(img.shape) < 5:
        raise ValueError(f"gaussian5x5 needs a 2-D image of at least 5x5, got {img.shape}")
    out = ndimage.correlate1d(img.astype(np.float64), BINOMIAL5, axis=0, mode="nearest")
    return ndimage.correlate1d(out, BINOMIAL5, axis=1, mode="nearest")


def threshold_binary(img: np.ndarray, t: float) -> np.ndarray:
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {t}")
    return np.where(np.asarray(img) > t, 255, 0).astype(np.uint8)


_SQUARE3 = np.ones((3, 3), dtype=bool)


def _erode(b: np.ndarray) -> np.ndarray:
    return ndimage.grey_erosion(b, footprint=_SQUARE3, mode="nearest")


def _dilate(b: np.ndarray) -> np.ndarray:
    return ndimage.grey_dilation(b, footprint=_SQUARE3, mode="nearest")


def morph_open(b: np.ndarray) -> np.ndarray:
    return _dilate(_erode(b))


def morph_close(b: np.ndarray) -> np.ndarray:
    return _erode(_dilate(b))


def morph_open_close(b: np.ndarray) -> np.ndarray:
    """3x3 opening followed by 3x3 closing, one iteration each."""
    return morph_close(morph_open(np.asarray(b, dtype=np.uint8)))


_EIGHT = np.ones((3, 3), dtype=int)


def connected_blobs(b: np.ndarray) -> list[Blob]:
    """8-connected white components, largest first."""
    labels, n = ndimage.label(np.asarray(b) > 0, structure=_EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    ys, xs = np.indices(labels.shape)
    flat = labels.ravel()
    sx = np.bincount(flat, weights=xs.ravel(), minlength=n + 1)[1:]
    sy = np.bincount(flat, weights=ys.ravel(), minlength=n + 1)[1:]
    slices = ndimage.find_objects(labels)
    blobs = []
    for i, sl, area, cx, cy in zip(idx, slices, areas, sx, sy):
        ysl, xsl = sl
        region = Region(xsl.start, ysl.start, xsl.stop - xsl.start, ysl.stop - ysl.start,
                        int(area), (cx / area, cy / area))
        blobs.append(Blob(int(area), (cx / area, cy / area), region))
    # stable: ties keep label (raster) order
    blobs.sort(key=lambda bl: -bl.area)
    return blobs


def largest_blob(b: np.ndarray) -> Blob | None:
    """Largest 8-connected component, ties broken by raster order."""
    labels, n = ndimage.label(np.asarray(b) > 0, structure=_EIGHT)
    if n == 0:
        return None
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    areas[0] = 0
    k = int(np.argmax(areas))
    ys, xs = np.nonzero(labels == k)
    area = int(areas[k])
    cx, cy = xs.mean(), ys.mean()
    region = Region(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1),
                    int(ys.max() - ys.min() + 1), area, (float(cx), float(cy)))
    return Blob(area, (float(cx), float(cy)), region)


def pyr_down(img: np.ndarray) -> np.ndarray:
    """Blur then keep even rows and columns; output dims are floor(dims / 2)."""
    h, w = img.shape
    blurred = gaussian5x5(img)
    return blurred[0:2 * (h // 2):2, 0:2 * (w // 2):2]


def check_pyramid_size(shape: tuple[int, int], max_level: int) -> None:
    if not 0 <= max_level <= MAX_PYRAMID_LEVEL:
        raise ValueError(f"max_level must be in [0, {MAX_PYRAMID_LEVEL}], got {max_level}")
    if max_level == 0:
        return
    top = min(shape) >> max_level
    if top < MIN_TOP_LEVEL:
        raise ValueError(
            f"image {shape[1]}x{shape[0]} too small for {max_level} pyramid levels "
            f"(top level would be {top} px, need >= {MIN_TOP_LEVEL})"
        )


def build_pyramid(img: np.ndarray, max_level: int) -> list[np.ndarray]:
    """Level 0 is ``img`` as float; level L+1 is pyr_down(level L)."""
    img = np.asarray(img)
    check_pyramid_size(img.shape, max_level)
    levels = [img.astype(np.float64)]
    for _ in range(max_level):
        levels.append(pyr_down(levels[-1]))
    return levels


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives (x, y) with replicated borders."""
    f = np.asarray(img, dtype=np.float64)
    gx = ndimage.correlate(f, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(f, _SOBEL_X.T, mode="nearest")
    return gx, gy


def min_eigen_map(img: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the 3x3-summed Sobel structure tensor per pixel."""
    gx, gy = sobel(img)
    box = np.ones((3, 3))
    ixx = ndimage.correlate(gx * gx, box, mode="nearest")
    iyy = ndimage.correlate(gy * gy, box, mode="nearest")
    ixy = ndimage.correlate(gx * gy, box, mode="nearest")
    return min_eigenvalue(ixx, iyy, ixy)


def min_eigenvalue(ixx, iyy, ixy):
    return ((ixx + iyy) - np.sqrt((ixx - iyy) ** 2 + 4.0 * ixy ** 2)) / 2.0


def shi_tomasi(img: np.ndarray, region: Region | None = None, max_corners: int = 5,
               quality: float = 0.01, min_dist: float = 5.0) -> list[Corner]:
    """Strongest min-eigenvalue corners inside ``region``, best first.

    Scores are computed on the full image so gradients at the region border
    see real neighbours rather than padding.
    """
    img = np.asarray(img)
    h, w = img.shape
    if region is None:
        region = Region(0, 0, w, h)
    if not region.within(w, h) or region.w <= 0 or region.h <= 0:
        raise ValueError(f"region {region.box} outside {w}x{h} image")
    # margin covers Sobel + tensor support + the 3x3 local-max test
    m = 3
    x0, y0 = max(0, region.x - m), max(0, region.y - m)
    x1, y1 = min(w, region.x + region.w + m), min(h, region.y + region.h + m)
    lam = min_eigen_map(img[y0:y1, x0:x1])
    rx0, ry0 = region.x - x0, region.y - y0
    resp = lam[ry0:ry0 + region.h, rx0:rx0 + region.w]
    peak = float(resp.max()) if resp.size else 0.0
    if peak <= 1e-9:
        return []
    local_max = ndimage.maximum_filter(lam, size=3, mode="nearest")
    local_max = local_max[ry0:ry0 + region.h, rx0:rx0 + region.w]
    keep = (resp >= quality * peak) & (resp >= local_max) & (resp > 0)
    ys, xs = np.nonzero(keep)
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    chosen: list[Corner] = []
    min_d2 = float(min_dist) ** 2
    for k in order:
        cx, cy = float(xs[k] + region.x), float(ys[k] + region.y)
        if all((cx - c.x) ** 2 + (cy - c.y) ** 2 >= min_d2 for c in chosen):
            chosen.append(Corner(cx, cy, float(scores[k])))
            if len(chosen) == max_corners:
                break
    return chosen
