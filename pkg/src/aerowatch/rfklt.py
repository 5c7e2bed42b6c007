"""Reference-frame pyramidal Lucas-Kanade tracking and the Dist feature.

Corners are found once in a fixed reference frame. Every later frame is
matched against that frozen reference (never against the previous frame),
so in the off state each corner matches itself and ``Dist`` stays near 0,
while spray over the machine drags the matches away.

All image work happens inside an analysis window around the region: the
region grown by the search radius plus the LK window, and at least large
enough for the requested pyramid depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .imgproc import (MAX_PYRAMID_LEVEL, MIN_TOP_LEVEL, Corner, Region, build_pyramid,
                      shi_tomasi)


@dataclass(frozen=True)
class LkConfig:
    window: int = 7
    max_iter: int = 30
    epsilon: float = 0.01
    min_eig_factor: float = 1e-4
    max_corners: int = 5
    corner_quality: float = 0.01
    corner_min_dist: float = 5.0
    zero_restart: bool = True      # also track from d = 0 at level 0, keep the better fit


def search_radius(region: Region) -> float:
    """Twice the half-diagonal of the region."""
    return 2.0 * math.sqrt((region.w / 2.0) ** 2 + (region.h / 2.0) ** 2)


def analysis_window(region: Region, width: int, height: int, levels: int,
                    window: int = 7) -> tuple[int, int, int, int]:
    """(x, y, w, h) of the frame crop that the tracker works on."""
    margin = int(math.ceil(search_radius(region))) + window + 2
    need = MIN_TOP_LEVEL << levels if levels > 0 else 1

    def span(lo: int, size: int, total: int) -> tuple[int, int]:
        a, b = lo - margin, lo + size + margin
        if b - a < need:
            extra = need - (b - a)
            a -= extra // 2
            b += extra - extra // 2
        if a < 0:
            b, a = b - a, 0
        if b > total:
            a, b = max(0, a - (b - total)), total
        return a, b

    x0, x1 = span(region.x, region.w, width)
    y0, y1 = span(region.y, region.h, height)
    return x0, y0, x1 - x0, y1 - y0


def _central_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(img, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) * 0.5
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) * 0.5
    return gx, gy


def _window_offsets(w: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.arange(-w, w + 1, dtype=np.float64)
    oy, ox = np.meshgrid(r, r, indexing="ij")
    return ox.ravel(), oy.ravel()


def bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates; out-of-range coordinates clamp to the edge."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    flat = img.ravel()
    a = flat[y0 * w + x0]
    b = flat[y0 * w + x1]
    c = flat[y1 * w + x0]
    d = flat[y1 * w + x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


@dataclass
class _LevelTemplate:
    """Reference windows of every corner at one pyramid level."""

    pos: np.ndarray        # (n, 2) corner positions at this level
    values: np.ndarray     # (n, m) reference gray values
    ix: np.ndarray         # (n, m)
    iy: np.ndarray         # (n, m)
    g_inv: np.ndarray      # (n, 2, 2)
    solvable: np.ndarray   # (n,) G well conditioned


def _make_template(ref: np.ndarray, grads: tuple[np.ndarray, np.ndarray], pos: np.ndarray,
                   cfg: LkConfig) -> _LevelTemplate:
    ox, oy = _window_offsets(cfg.window)
    xs = pos[:, :1] + ox[None]
    ys = pos[:, 1:] + oy[None]
    values = bilinear(ref, xs, ys)
    ix = bilinear(grads[0], xs, ys)
    iy = bilinear(grads[1], xs, ys)
    gxx = (ix * ix).sum(axis=1)
    gyy = (iy * iy).sum(axis=1)
    gxy = (ix * iy).sum(axis=1)
    det = gxx * gyy - gxy * gxy
    lam_min = ((gxx + gyy) - np.sqrt((gxx - gyy) ** 2 + 4.0 * gxy ** 2)) / 2.0
    solvable = lam_min >= cfg.min_eig_factor * ox.size
    safe = np.where(solvable, det, 1.0)
    g_inv = np.empty((pos.shape[0], 2, 2))
    g_inv[:, 0, 0] = gyy / safe
    g_inv[:, 1, 1] = gxx / safe
    g_inv[:, 0, 1] = g_inv[:, 1, 0] = -gxy / safe
    return _LevelTemplate(pos, values, ix, iy, g_inv, solvable)


def _pad_level(img: np.ndarray, window: int) -> np.ndarray:
    return np.pad(np.asarray(img, dtype=np.float64), window + 2, mode="edge")


def _iterate_level_numpy(tpl: _LevelTemplate, cur_padded: np.ndarray, shape: tuple[int, int],
                   guess: np.ndarray, cfg: LkConfig,
                   limit: float = math.inf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised LK at one level. Returns (d, residual, converged).

    ``cur_padded`` is the current level padded by ``window + 2`` edge pixels,
    ``shape`` its unpadded size. ``guess + d`` is kept inside a disc of radius
    ``limit`` (level pixels).
    """
    n = tpl.pos.shape[0]
    h, w = shape
    win = cfg.window
    pad = win + 2
    side = 2 * win + 2
    wp = cur_padded.shape[1]
    flat = cur_padded.ravel()
    rr, cc = np.mgrid[0:side, 0:side]
    grid = (rr * wp + cc).ravel()

    def sample(centre: np.ndarray) -> np.ndarray:
        x0 = np.floor(centre[:, 0])
        y0 = np.floor(centre[:, 1])
        fx = (centre[:, 0] - x0)[:, None, None]
        fy = (centre[:, 1] - y0)[:, None, None]
        base = (y0.astype(np.intp) + pad - win) * wp + (x0.astype(np.intp) + pad - win)
        patch = flat[base[:, None] + grid].reshape(-1, side, side)
        top = patch[:, :-1, :-1] + fx * (patch[:, :-1, 1:] - patch[:, :-1, :-1])
        bot = patch[:, 1:, :-1] + fx * (patch[:, 1:, 1:] - patch[:, 1:, :-1])
        return (top + fy * (bot - top)).reshape(centre.shape[0], -1)

    def inside(centre: np.ndarray) -> np.ndarray:
        return ((centre[:, 0] >= 0) & (centre[:, 0] <= w - 1)
                & (centre[:, 1] >= 0) & (centre[:, 1] <= h - 1))

    d = np.zeros((n, 2))
    ok = tpl.solvable.copy()
    idx = np.flatnonzero(ok)
    eps2 = cfg.epsilon ** 2
    for _ in range(cfg.max_iter):
        if idx.size == 0:
            break
        centre = tpl.pos[idx] + guess[idx] + d[idx]
        good = inside(centre)
        if not good.all():
            ok[idx[~good]] = False
            idx, centre = idx[good], centre[good]
            if idx.size == 0:
                break
        delta = tpl.values[idx] - sample(centre)
        bx = np.einsum("ij,ij->i", delta, tpl.ix[idx])
        by = np.einsum("ij,ij->i", delta, tpl.iy[idx])
        gi = tpl.g_inv[idx]
        step = np.empty((idx.size, 2))
        step[:, 0] = gi[:, 0, 0] * bx + gi[:, 0, 1] * by
        step[:, 1] = gi[:, 1, 0] * bx + gi[:, 1, 1] * by
        old = d[idx]
        new = old + step
        if limit != math.inf:
            total = guess[idx] + new
            norm = np.sqrt((total * total).sum(axis=1))
            over = norm > limit
            if over.any():
                total[over] *= (limit / norm[over])[:, None]
                new = total - guess[idx]
        d[idx] = new
        moved = new - old
        idx = idx[(moved * moved).sum(axis=1) >= eps2]
    centre = tpl.pos + guess + d
    ok &= inside(centre)
    residual = np.full(n, np.inf)
    if ok.any():
        delta = tpl.values[ok] - sample(centre[ok])
        residual[ok] = (delta * delta).sum(axis=1)
    return d, residual, ok


@njit(cache=True)
def _lk_kernel(pos, guess, values, ix, iy, g_inv, solvable, cur, h, w, win,
               max_iter, eps, limit):
    n = pos.shape[0]
    side = 2 * win + 1
    off = 2  # padding beyond the window half-size
    d = np.zeros((n, 2))
    ok = solvable.copy()
    residual = np.full(n, np.inf)
    eps2 = eps * eps
    for k in range(n):
        if not ok[k]:
            continue
        gx = guess[k, 0]
        gy = guess[k, 1]
        dx = 0.0
        dy = 0.0
        for _ in range(max_iter):
            cx = pos[k, 0] + gx + dx
            cy = pos[k, 1] + gy + dy
            if cx < 0.0 or cx > w - 1 or cy < 0.0 or cy > h - 1:
                ok[k] = False
                break
            x0 = np.floor(cx)
            y0 = np.floor(cy)
            fx = cx - x0
            fy = cy - y0
            r0 = int(y0) + off
            c0 = int(x0) + off
            bx = 0.0
            by = 0.0
            m = 0
            for r in range(side):
                for c in range(side):
                    a = cur[r0 + r, c0 + c]
                    b = cur[r0 + r, c0 + c + 1]
                    e = cur[r0 + r + 1, c0 + c]
                    f = cur[r0 + r + 1, c0 + c + 1]
                    top = a + fx * (b - a)
                    bot = e + fx * (f - e)
                    delta = values[k, m] - (top + fy * (bot - top))
                    bx += delta * ix[k, m]
                    by += delta * iy[k, m]
                    m += 1
            nx = dx + g_inv[k, 0, 0] * bx + g_inv[k, 0, 1] * by
            ny = dy + g_inv[k, 1, 0] * bx + g_inv[k, 1, 1] * by
            tx = gx + nx
            ty = gy + ny
            norm = np.sqrt(tx * tx + ty * ty)
            if norm > limit:
                nx = tx * (limit / norm) - gx
                ny = ty * (limit / norm) - gy
            mx = nx - dx
            my = ny - dy
            dx = nx
            dy = ny
            if mx * mx + my * my < eps2:
                break
        d[k, 0] = dx
        d[k, 1] = dy
        if not ok[k]:
            continue
        cx = pos[k, 0] + gx + dx
        cy = pos[k, 1] + gy + dy
        if cx < 0.0 or cx > w - 1 or cy < 0.0 or cy > h - 1:
            ok[k] = False
            continue
        x0 = np.floor(cx)
        y0 = np.floor(cy)
        fx = cx - x0
        fy = cy - y0
        r0 = int(y0) + off
        c0 = int(x0) + off
        acc = 0.0
        m = 0
        for r in range(side):
            for c in range(side):
                a = cur[r0 + r, c0 + c]
                b = cur[r0 + r, c0 + c + 1]
                e = cur[r0 + r + 1, c0 + c]
                f = cur[r0 + r + 1, c0 + c + 1]
                top = a + fx * (b - a)
                bot = e + fx * (f - e)
                delta = values[k, m] - (top + fy * (bot - top))
                acc += delta * delta
                m += 1
        residual[k] = acc
    return d, residual, ok


def _iterate_level(tpl: _LevelTemplate, cur_padded: np.ndarray, shape: tuple[int, int],
                   guess: np.ndarray, cfg: LkConfig,
                   limit: float = math.inf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compiled equivalent of :func:`_iterate_level_numpy`."""
    return _lk_kernel(tpl.pos, np.ascontiguousarray(guess, dtype=np.float64), tpl.values,
                      tpl.ix, tpl.iy, tpl.g_inv, tpl.solvable, cur_padded, shape[0], shape[1],
                      cfg.window, cfg.max_iter, cfg.epsilon, limit)


def lk_at_level(ref_level: np.ndarray, cur_level: np.ndarray, u: tuple[float, float],
                g: tuple[float, float] = (0.0, 0.0), w: int = 7,
                cfg: LkConfig | None = None) -> tuple[np.ndarray, float, bool]:
    """Single-point iterative LK: returns (d, residual, converged)."""
    cfg = cfg or LkConfig()
    if w != cfg.window:
        cfg = LkConfig(**{**cfg.__dict__, "window": w})
    ref = np.asarray(ref_level, dtype=np.float64)
    cur = np.asarray(cur_level, dtype=np.float64)
    h, wid = ref.shape
    if not (0 <= u[0] <= wid - 1 and 0 <= u[1] <= h - 1):
        return np.zeros(2), float("inf"), False
    tpl = _make_template(ref, _central_gradients(ref), np.array([u], dtype=np.float64), cfg)
    d, res, ok = _iterate_level(tpl, _pad_level(cur, cfg.window), cur.shape,
                                np.array([g], dtype=np.float64), cfg)
    return d[0], float(res[0]), bool(ok[0])


def _zero_mean_ssd(tpl: _LevelTemplate, cur: np.ndarray, disp: np.ndarray, window: int) -> np.ndarray:
    """Window SSD after removing the mean difference, so a uniform gray shift costs nothing."""
    ox, oy = _window_offsets(window)
    xs = tpl.pos[:, :1] + disp[:, :1] + ox[None]
    ys = tpl.pos[:, 1:] + disp[:, 1:] + oy[None]
    diff = bilinear(np.asarray(cur, dtype=np.float64), xs, ys) - tpl.values
    diff -= diff.mean(axis=1, keepdims=True)
    return (diff * diff).sum(axis=1)


def propagate_guess(g: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Initial guess for the next finer level."""
    return 2.0 * (np.asarray(g, dtype=np.float64) + np.asarray(d, dtype=np.float64))


@dataclass
class FlowResult:
    corners: list[Corner]
    matched: np.ndarray       # (n,) bool
    displacement: np.ndarray  # (n, 2) level-0 pixels
    residual: np.ndarray      # (n,)


@dataclass
class ReferenceSet:
    """Frozen reference: pyramid, corners and per-level LK templates."""

    region: Region
    corners: list[Corner]
    levels: int
    frame_shape: tuple[int, int]
    window: tuple[int, int, int, int]
    search_radius: float
    config: LkConfig
    ref_pyramid: list[np.ndarray] = field(repr=False)
    _templates: list[_LevelTemplate] = field(repr=False, default_factory=list)

    @classmethod
    def build(cls, reference: np.ndarray, region: Region, levels: int = 4,
              config: LkConfig | None = None, corners: list[Corner] | None = None) -> "ReferenceSet":
        cfg = config or LkConfig()
        reference = np.asarray(reference)
        h, w = reference.shape
        if not 0 <= levels <= MAX_PYRAMID_LEVEL:
            raise ValueError(f"levels must be in [0, {MAX_PYRAMID_LEVEL}]")
        if not region.within(w, h):
            raise ValueError(f"region {region.box} outside {w}x{h} frame")
        if corners is None:
            corners = shi_tomasi(reference, region, cfg.max_corners, cfg.corner_quality,
                                 cfg.corner_min_dist)
        win = analysis_window(region, w, h, levels, cfg.window)
        x0, y0, ww, wh = win
        pyr = build_pyramid(reference[y0:y0 + wh, x0:x0 + ww], levels)
        ref = cls(region, list(corners), levels, (h, w), win, search_radius(region), cfg, pyr)
        ref._prepare()
        return ref

    def _prepare(self):
        base = np.array([[c.x - self.window[0], c.y - self.window[1]] for c in self.corners],
                        dtype=np.float64).reshape(-1, 2)
        self._templates = []
        for level, img in enumerate(self.ref_pyramid):
            pos = base / (1 << level)
            self._templates.append(_make_template(img, _central_gradients(img), pos, self.config))

    @property
    def region_center(self) -> np.ndarray:
        cx, cy = self.region.center
        return np.array([cx - self.window[0], cy - self.window[1]])

    def crop(self, frame: np.ndarray) -> np.ndarray:
        x0, y0, w, h = self.window
        return frame[y0:y0 + h, x0:x0 + w]

    def cur_pyramid(self, frame: np.ndarray, levels: int | None = None) -> list[np.ndarray]:
        frame = np.asarray(frame)
        if frame.shape != self.frame_shape:
            raise ValueError(f"frame shape {frame.shape} does not match reference {self.frame_shape}")
        return build_pyramid(self.crop(frame), self.levels if levels is None else levels)


def track_pyramidal(ref: ReferenceSet, cur_frame: np.ndarray, max_level: int | None = None,
                    cur_pyramid: list[np.ndarray] | None = None) -> FlowResult:
    """Match every reference corner into ``cur_frame``, coarse to fine.

    ``max_level`` caps the pyramid depth (defaults to ``ref.levels``); a
    precomputed ``cur_pyramid`` of at least that depth may be passed in.
    """
    top = ref.levels if max_level is None else max_level
    if not 0 <= top <= ref.levels:
        raise ValueError(f"max_level must be in [0, {ref.levels}]")
    if cur_pyramid is None:
        cur_pyramid = ref.cur_pyramid(cur_frame, top)
    n = len(ref.corners)
    if n == 0:
        return FlowResult([], np.zeros(0, dtype=bool), np.zeros((0, 2)), np.zeros(0))
    cfg = ref.config
    guess = np.zeros((n, 2))
    d = np.zeros((n, 2))
    residual = np.zeros(n)
    ok = np.zeros(n, dtype=bool)
    for level in range(top, -1, -1):
        tpl = ref._templates[level]
        limit = ref.search_radius / (1 << level)
        cur = cur_pyramid[level]
        padded = _pad_level(cur, cfg.window)
        d, residual, ok = _iterate_level(tpl, padded, cur.shape, guess, cfg, limit)
        if level == top and not ok.all():
            # retry lost corners from the region centre
            lost = np.flatnonzero(~ok)
            retry = (ref.region_center[None] - tpl.pos[lost] * (1 << level)) / (1 << level)
            sub = _LevelTemplate(tpl.pos[lost], tpl.values[lost], tpl.ix[lost], tpl.iy[lost],
                                 tpl.g_inv[lost], tpl.solvable[lost])
            d2, r2, ok2 = _iterate_level(sub, padded, cur.shape, retry, cfg, limit)
            guess[lost] = np.where(ok2[:, None], retry, guess[lost])
            d[lost] = np.where(ok2[:, None], d2, 0.0)
            residual[lost] = r2
            ok[lost] = ok2
        if level > 0:
            d = np.where(ok[:, None], d, 0.0)
            guess = propagate_guess(guess, d)
    flow = guess + d
    if cfg.zero_restart and top > 0:
        # the object does not move: a brightness change near it can drag the
        # coarse levels far off, so also track from d = 0 at full resolution
        # and keep the better offset-free fit to the reference
        tpl = ref._templates[0]
        d0, _, ok0 = _iterate_level(tpl, padded, cur.shape, np.zeros((n, 2)), cfg,
                                    ref.search_radius)
        options = [(flow, ok), (d0, ok0)]
        cost = np.stack([np.where(o, _zero_mean_ssd(tpl, cur, f, cfg.window), np.inf)
                         for f, o in options])
        pick = np.argmin(cost, axis=0)
        flow = np.stack([f for f, _ in options])[pick, np.arange(n)]
        residual = cost.min(axis=0)
        ok = np.isfinite(residual)
    norm = np.sqrt((flow ** 2).sum(axis=1))
    matched = ok & (norm <= ref.search_radius * (1 + 1e-9))
    return FlowResult(list(ref.corners), matched, flow, residual)


def dist_feature(flow: FlowResult) -> float:
    """Mean Manhattan displacement over matched corners; 0 with none matched."""
    if not flow.matched.any():
        return 0.0
    d = flow.displacement[flow.matched]
    return float(np.abs(d).sum(axis=1).mean())


def dist_series(frames, ref: ReferenceSet, max_level: int | None = None) -> np.ndarray:
    """Dist of every frame against the fixed reference."""
    return np.array([dist_feature(track_pyramidal(ref, f, max_level)) for f in frames])


def dist_series_by_level(frames, ref: ReferenceSet) -> np.ndarray:
    """(levels + 1, n_frames) Dist for every pyramid cap 0..ref.levels.

    The current-frame pyramid is built once per frame and shared by all caps.
    """
    frames = list(frames)
    out = np.zeros((ref.levels + 1, len(frames)))
    for t, f in enumerate(frames):
        pyr = ref.cur_pyramid(f)
        for cap in range(ref.levels + 1):
            out[cap, t] = dist_feature(track_pyramidal(ref, f, cap, pyr))
    return out


def adjacent_dist_series(frames, region: Region, levels: int = 4,
                         config: LkConfig | None = None) -> np.ndarray:
    """Conventional KLT baseline: each frame is matched against the previous one.

    Corners are re-detected in the previous frame every step. Used for
    comparison only; the detector itself always uses a fixed reference.
    """
    frames = [np.asarray(f) for f in frames]
    out = np.zeros(len(frames))
    for t in range(1, len(frames)):
        ref = ReferenceSet.build(frames[t - 1], region, levels, config)
        out[t] = dist_feature(track_pyramidal(ref, frames[t]))
    return out
