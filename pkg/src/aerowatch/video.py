"""RGV1 raw-video container, augmentation operators and synthetic aerator scenes.

RGV1 layout (little-endian)::

    b"RGV1" | u32 width | u32 height | u16 fps | u32 frame_count | frames...

Each frame is ``width * height`` bytes of 8-bit gray, row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

MAGIC = b"RGV1"
_HEADER = struct.Struct("<4sIIHI")


class VideoFormatError(ValueError):
    """File does not start with the RGV1 magic or has an invalid header."""


class VideoCorruptError(ValueError):
    """Payload ended before the frame count promised by the header."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class VideoMeta:
    width: int
    height: int
    fps: int
    frame_count: int

    def __post_init__(self):
        if self.fps < 1:
            raise ValueError(f"fps must be >= 1, got {self.fps}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame must be at least 1x1, got {self.width}x{self.height}")
        if self.frame_count < 0:
            raise ValueError("frame_count must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass
class Frame:
    """One gray frame. ``pixels`` is an (height, width) uint8 array."""

    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError("frame pixels must be a 2-D array")
        if self.pixels.dtype != np.uint8:
            raise ValueError("frame pixels must be uint8")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


# --------------------------------------------------------------------- I/O


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = fh.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_header(fh: BinaryIO) -> VideoMeta:
    raw = _read_exact(fh, _HEADER.size)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise VideoFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise VideoCorruptError("truncated header", len(raw))
    _, width, height, fps, count = _HEADER.unpack(raw)
    try:
        return VideoMeta(width, height, fps, count)
    except ValueError as exc:
        raise VideoFormatError(str(exc)) from None


def iter_frames(fh: BinaryIO, meta: VideoMeta) -> Iterator[Frame]:
    """Yield frames from a stream positioned just after the header."""
    frame_bytes = meta.width * meta.height
    for i in range(meta.frame_count):
        raw = _read_exact(fh, frame_bytes)
        if len(raw) != frame_bytes:
            offset = _HEADER.size + i * frame_bytes + len(raw)
            raise VideoCorruptError(
                f"frame {i} truncated: got {len(raw)} of {frame_bytes} bytes", offset
            )
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(meta.height, meta.width)
        yield Frame(pixels, i)


def read_video(path: str | Path) -> tuple[VideoMeta, Iterator[Frame]]:
    """Open an RGV1 file. The header is validated eagerly, frames lazily."""
    fh = open(path, "rb")
    try:
        meta = read_header(fh)
    except Exception:
        fh.close()
        raise

    def _gen():
        with fh:
            yield from iter_frames(fh, meta)

    return meta, _gen()


def load_video(path: str | Path) -> tuple[VideoMeta, list[Frame]]:
    meta, frames = read_video(path)
    return meta, list(frames)


def write_header(fh: BinaryIO, meta: VideoMeta) -> None:
    fh.write(_HEADER.pack(MAGIC, meta.width, meta.height, meta.fps, meta.frame_count))


def write_video(meta: VideoMeta, frames: Iterable[Frame | np.ndarray], path: str | Path) -> None:
    """Write frames to ``path``; the number written must equal ``meta.frame_count``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    n = 0
    with open(tmp, "wb") as fh:
        write_header(fh, meta)
        for frame in frames:
            px = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
            if px.shape != meta.shape:
                fh.close()
                tmp.unlink(missing_ok=True)
                raise ValueError(f"frame {n} has shape {px.shape}, expected {meta.shape}")
            fh.write(np.ascontiguousarray(px, dtype=np.uint8).tobytes())
            n += 1
    if n != meta.frame_count:
        tmp.unlink(missing_ok=True)
        raise ValueError(f"wrote {n} frames but meta.frame_count is {meta.frame_count}")
    tmp.replace(path)


# ---------------------------------------------------------- augmentation


def band_mask(shape: tuple[int, int], row_ratio: float, col_ratio: float,
              box: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Boolean mask of the leading ``row_ratio`` rows and ``col_ratio`` columns.

    The rows and columns are counted inside ``box`` (x, y, w, h) when given,
    otherwise over the whole frame. The mask is the intersection of both bands.
    """
    h, w = shape
    x0, y0, bw, bh = box if box is not None else (0, 0, w, h)
    nr = int(round(row_ratio * bh))
    nc = int(round(col_ratio * bw))
    mask = np.zeros(shape, dtype=bool)
    mask[y0:y0 + nr, x0:x0 + nc] = True
    return mask


def apply_gray_shift(frame: Frame, v: int, mask: np.ndarray | None = None) -> Frame:
    """Add ``v`` to masked pixels and clamp to [0, 255]."""
    px = frame.pixels.astype(np.int16)
    shifted = np.clip(px + int(v), 0, 255)
    if mask is not None:
        shifted = np.where(mask, shifted, px)
    return Frame(shifted.astype(np.uint8), frame.index)


def apply_salt_pepper(frame: Frame, snr: float, mask: np.ndarray | None = None,
                      seed: int | np.random.Generator = 0) -> Frame:
    """Set ``round(snr * |mask|)`` masked pixels to 0 or 255 (equal odds)."""
    if not 0.0 <= snr <= 0.5:
        raise ValueError(f"snr must be in [0, 0.5], got {snr}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = frame.pixels.copy()
    if mask is None:
        candidates = np.arange(out.size)
    else:
        candidates = np.flatnonzero(mask)
    n = int(round(snr * candidates.size))
    if n == 0:
        return Frame(out, frame.index)
    chosen = rng.choice(candidates, size=n, replace=False)
    values = np.where(rng.random(n) < 0.5, 0, 255).astype(np.uint8)
    out.reshape(-1)[chosen] = values
    return Frame(out, frame.index)


def _as_range(value) -> tuple[float, float]:
    if isinstance(value, (list, tuple)):
        lo, hi = value
        return float(lo), float(hi)
    return float(value), float(value)


def _draw_stepped(rng: np.random.Generator, lo: float, hi: float, step: float) -> float:
    if hi <= lo or step <= 0:
        return lo
    n = int(round((hi - lo) / step))
    return lo + step * int(rng.integers(0, n + 1))


@dataclass
class AugmentSpec:
    """Per-frame brightness and impulse-noise augmentation.

    Each of ``row_ratio``, ``col_ratio``, ``gray_delta`` and ``snr`` is either
    a fixed value or a ``[lo, hi]`` range drawn per frame at the matching step.
    ``box`` optionally restricts the mask to an (x, y, w, h) window.
    """

    row_ratio: float | tuple[float, float] = 1.0
    col_ratio: float | tuple[float, float] = 1.0
    gray_delta: int | tuple[int, int] = 0
    snr: float | tuple[float, float] = 0.0
    apply_to_reference: bool = True
    seed: int = 0
    ratio_step: float = 0.1
    gray_step: float = 1.0
    snr_step: float = 0.01
    box: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        for name in ("row_ratio", "col_ratio"):
            lo, hi = _as_range(getattr(self, name))
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = _as_range(self.snr)
        if not (0.0 <= lo <= hi <= 0.5):
            raise ValueError("snr must lie in [0, 0.5]")
        lo, hi = _as_range(self.gray_delta)
        if lo > hi:
            raise ValueError("gray_delta range is inverted")

    @property
    def is_identity(self) -> bool:
        return _as_range(self.gray_delta) == (0.0, 0.0) and _as_range(self.snr) == (0.0, 0.0)

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentSpec":
        data = dict(data)
        for key in ("row_ratio", "col_ratio", "gray_delta", "snr", "box"):
            if isinstance(data.get(key), list):
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class FrameAugmentation:
    row_ratio: float
    col_ratio: float
    gray_delta: int
    snr: float


def draw_augmentation(spec: AugmentSpec, rng: np.random.Generator) -> FrameAugmentation:
    rows = _draw_stepped(rng, *_as_range(spec.row_ratio), spec.ratio_step)
    cols = _draw_stepped(rng, *_as_range(spec.col_ratio), spec.ratio_step)
    delta = _draw_stepped(rng, *_as_range(spec.gray_delta), spec.gray_step)
    snr = _draw_stepped(rng, *_as_range(spec.snr), spec.snr_step)
    return FrameAugmentation(rows, cols, int(round(delta)), min(max(snr, 0.0), 0.5))


def augment_frames(frames: Iterable[Frame], spec: AugmentSpec) -> Iterator[Frame]:
    rng = np.random.default_rng(spec.seed)
    for frame in frames:
        if frame.index == 0 and not spec.apply_to_reference:
            yield frame
            continue
        if spec.is_identity:
            yield frame
            continue
        aug = draw_augmentation(spec, rng)
        mask = band_mask(frame.pixels.shape, aug.row_ratio, aug.col_ratio, spec.box)
        out = apply_gray_shift(frame, aug.gray_delta, mask) if aug.gray_delta else frame
        if aug.snr > 0:
            out = apply_salt_pepper(out, aug.snr, mask, rng)
        yield out


def augment_video(in_path: str | Path, spec: AugmentSpec, out_path: str | Path) -> None:
    meta, frames = read_video(in_path)
    write_video(meta, augment_frames(frames, spec), out_path)


# -------------------------------------------------------- synthetic scenes

BACKGROUND_KINDS = ("flat", "ripple", "jitter", "pedestrian")


@dataclass
class SynthScene:
    """A fixed aerator over a pond, switched on during ``on_intervals``.

    ``layout_seed`` fixes the static content (water, machine body); ``seed``
    drives everything that moves. Two scenes that differ only in ``seed`` share
    the same off-state appearance, so a model trained on one applies to the other.
    """

    meta: VideoMeta
    object_box: tuple[int, int, int, int]
    on_intervals: list[tuple[int, int]] = field(default_factory=list)
    background_kind: str = "flat"
    seed: int = 0
    layout_seed: int = 0
    spray_scale: float = 1.0
    ramp_frames: int = 6
    noise_sigma: float = 1.5
    jitter_px: int = 2

    def __post_init__(self):
        self.on_intervals = [tuple(map(int, iv)) for iv in self.on_intervals]
        self.object_box = tuple(int(v) for v in self.object_box)
        if self.background_kind not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background_kind {self.background_kind!r}")
        x, y, w, h = self.object_box
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > self.meta.width or y + h > self.meta.height:
            raise ValueError(f"object_box {self.object_box} outside {self.meta.width}x{self.meta.height} frame")
        prev_end = 0
        for a, b in self.on_intervals:
            if not (prev_end <= a < b <= self.meta.frame_count):
                raise ValueError(f"on_intervals must be sorted, disjoint and within [0, {self.meta.frame_count})")
            prev_end = b

    def is_on(self, t: int) -> bool:
        return any(a <= t < b for a, b in self.on_intervals)

    def labels(self) -> np.ndarray:
        out = np.zeros(self.meta.frame_count, dtype=np.int8)
        for a, b in self.on_intervals:
            out[a:b] = 1
        return out

    def truth_json(self) -> dict:
        return {"on_intervals": [list(iv) for iv in self.on_intervals],
                "object_box": list(self.object_box), "frame_count": self.meta.frame_count}

    @classmethod
    def from_dict(cls, data: dict) -> "SynthScene":
        data = dict(data)
        meta = data.pop("meta")
        if isinstance(meta, dict):
            meta = VideoMeta(**meta)
        return cls(meta=meta, **data)


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, int], scale: int) -> np.ndarray:
    """Zero-mean, unit-std blobby noise with feature size around ``scale`` px."""
    from scipy.ndimage import gaussian_filter

    n = rng.standard_normal(shape)
    n = gaussian_filter(n, sigma=max(scale, 1) / 2.0, mode="wrap")
    return n / (n.std() + 1e-12)


class _SceneRenderer:
    def __init__(self, scene: SynthScene):
        self.scene = scene
        m = scene.meta
        self.pad = scene.jitter_px if scene.background_kind == "jitter" else 0
        ph, pw = m.height + 2 * self.pad, m.width + 2 * self.pad
        layout = np.random.default_rng(scene.layout_seed)
        self.rng = np.random.default_rng(scene.seed)

        yy, xx = np.mgrid[0:ph, 0:pw].astype(np.float64)
        water = 70.0 + 12.0 * (yy / ph) + 4.0 * _smooth_noise(layout, (ph, pw), 24)
        self.water = water
        self.yy, self.xx = yy, xx
        if scene.background_kind == "ripple":
            a1 = 0.21 * xx + 0.13 * yy
            a2 = 0.05 * xx - 0.17 * yy
            self.ripple_basis = ((np.sin(a1), np.cos(a1)), (np.sin(a2), np.cos(a2)))

        x, y, w, h = scene.object_box
        self.box = (x + self.pad, y + self.pad, w, h)
        self.body = self._machine_body(layout, w, h)

        # spray ellipse is inscribed in the box scaled by spray_scale
        self.cx = x + self.pad + (w - 1) / 2.0
        self.cy = y + self.pad + (h - 1) / 2.0
        self.rx = scene.spray_scale * w / 2.0
        self.ry = scene.spray_scale * h / 2.0

        # texture lives on the bounding box of the full-size spray only
        ph_, pw_ = self.water.shape
        sx0 = max(0, int(self.cx - self.rx) - 1)
        sy0 = max(0, int(self.cy - self.ry) - 1)
        sx1 = min(pw_, int(self.cx + self.rx) + 2)
        sy1 = min(ph_, int(self.cy + self.ry) + 2)
        self.spray_origin = (sx0, sy0)
        self.spray_shape = (sy1 - sy0, sx1 - sx0)
        self.spray_field = None
        if scene.background_kind == "pedestrian":
            self._plan_pedestrian(layout)

    @staticmethod
    def _machine_body(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
        """Static high-contrast body: dark hull with bright panels and struts."""
        body = np.full((h, w), 45.0)
        n_panels = 4
        for _ in range(n_panels):
            pw = max(3, int(rng.integers(w // 5, max(w // 5 + 1, w // 2))))
            ph = max(3, int(rng.integers(h // 5, max(h // 5 + 1, h // 2))))
            px = int(rng.integers(1, max(2, w - pw)))
            py = int(rng.integers(1, max(2, h - ph)))
            body[py:py + ph, px:px + pw] = float(rng.integers(150, 210))
        body[h // 2 - max(1, h // 16): h // 2 + max(1, h // 16) + 1, :] = 110.0
        return body

    def _plan_pedestrian(self, rng: np.random.Generator):
        m = self.scene.meta
        x, y, w, h = self.scene.object_box
        ped_h, ped_w = 22, 10
        spray_top = int(self.cy - self.ry) - self.pad
        spray_bot = int(self.cy + self.ry) - self.pad + 1
        # horizontal lane on the roomier side, in the half of that side farthest
        # from the machine, so the walker never competes with the object region
        above = (4, spray_top - ped_h - 4)             # lane-top range above the spray
        below = (spray_bot + 4, m.height - ped_h - 4)  # and below it
        lo, hi = max(above, below, key=lambda r: r[1] - r[0])
        if hi <= lo:
            raise ValueError("frame too small for a pedestrian lane clear of the object")
        half = (hi - lo) // 2
        lane = int(rng.integers(lo, lo + half + 1) if (lo, hi) == above else rng.integers(hi - half, hi + 1))
        self.ped = (lane, ped_h, ped_w)

    # per-frame pieces ------------------------------------------------

    def spray_level(self, t: int) -> float:
        """0 when off, ramps to 1 over ``ramp_frames`` after switch-on and back."""
        s = self.scene
        ramp = max(1, s.ramp_frames)
        level = 0.0
        for a, b in s.on_intervals:
            if a <= t < b:
                level = min(1.0, (t - a + 1) / ramp)
            elif b <= t < b + ramp:
                level = max(level, 1.0 - (t - b + 1) / ramp)
        return level

    def render(self, t: int) -> np.ndarray:
        s = self.scene
        img = self.water.copy()
        if s.background_kind == "ripple":
            # sin(a - p) expanded so the spatial terms are computed once
            p1, p2 = 0.35 * t, -0.21 * t
            (s1, c1), (s2, c2) = self.ripple_basis
            img += 5.0 * (s1 * np.cos(p1) - c1 * np.sin(p1))
            img += 3.0 * (s2 * np.cos(p2) - c2 * np.sin(p2))

        bx, by, bw, bh = self.box
        img[by:by + bh, bx:bx + bw] = self.body

        level = self.spray_level(t)
        if level > 0:
            self._draw_spray(img, level)

        if s.background_kind == "pedestrian":
            self._draw_pedestrian(img, t)

        if self.pad:
            if t == 0:
                ox = oy = 0
            else:
                ox, oy = (int(v) for v in self.rng.integers(-s.jitter_px, s.jitter_px + 1, size=2))
            p = self.pad
            img = img[p + oy:p + oy + s.meta.height, p + ox:p + ox + s.meta.width]

        if s.noise_sigma > 0:
            img = img + self.rng.normal(0.0, s.noise_sigma, img.shape)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)

    def _draw_spray(self, img: np.ndarray, level: float):
        rx = max(1.0, self.rx * (0.45 + 0.55 * level))
        ry = max(1.0, self.ry * (0.45 + 0.55 * level))
        y0 = max(0, int(self.cy - ry) - 1)
        y1 = min(img.shape[0], int(self.cy + ry) + 2)
        x0 = max(0, int(self.cx - rx) - 1)
        x1 = min(img.shape[1], int(self.cx + rx) + 2)
        yy = self.yy[y0:y1, x0:x1]
        xx = self.xx[y0:y1, x0:x1]
        inside = ((xx - self.cx) / rx) ** 2 + ((yy - self.cy) / ry) ** 2 <= 1.0
        px, py = self.spray_origin
        field_ = self._spray_texture()[y0 - py:y1 - py, x0 - px:x1 - px]
        texture = 232.0 + 14.0 * field_
        patch = img[y0:y1, x0:x1]
        patch[inside] = texture[inside]

    def _spray_texture(self) -> np.ndarray:
        """Unit-variance texture over the spray box that decorrelates over a few
        frames (AR(1), rho=0.8)."""
        fresh = _smooth_noise(self.rng, self.spray_shape, 3)
        if self.spray_field is None:
            self.spray_field = fresh
        else:
            rho = 0.8
            self.spray_field = rho * self.spray_field + np.sqrt(1 - rho * rho) * fresh
        return self.spray_field

    def _draw_pedestrian(self, img: np.ndarray, t: int):
        lane, ph, pw = self.ped
        width = self.scene.meta.width
        span = width - pw - 8
        pos = (3 * t) % (2 * span)
        px = 4 + (pos if pos < span else 2 * span - pos) + self.pad
        py = lane + self.pad
        img[py:py + ph, px:px + pw] = 150.0
        img[py:py + 6, px + 2:px + pw - 2] = 185.0


def render_scene(scene: SynthScene) -> Iterator[Frame]:
    renderer = _SceneRenderer(scene)
    for t in range(scene.meta.frame_count):
        yield Frame(renderer.render(t), t)


def synth_scene(scene: SynthScene, path: str | Path, labels_path: str | Path | None = None) -> None:
    """Render ``scene`` to an RGV1 file plus a JSON ground-truth sidecar."""
    path = Path(path)
    write_video(scene.meta, render_scene(scene), path)
    labels_path = Path(labels_path) if labels_path else path.with_suffix(".labels.json")
    labels_path.write_text(json.dumps(scene.truth_json()) + "\n")


def read_labels(path: str | Path, frame_count: int) -> np.ndarray:
    truth = json.loads(Path(path).read_text())
    out = np.zeros(frame_count, dtype=np.int8)
    for a, b in truth["on_intervals"]:
        out[a:b] = 1
    return out
