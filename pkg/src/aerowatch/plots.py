"""Dependency-free CSV and SVG output for detection runs."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_COLORS = {0: "#1f77b4", 1: "#d62728"}


def write_series_csv(path: str | Path, dist, ewma, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "dist", "ewma", "label"])
        for i, (d, e, lab) in enumerate(zip(dist, ewma, labels)):
            w.writerow([i, repr(float(d)), repr(float(e)), int(lab)])


def _scale(values, lo_px: float, hi_px: float):
    v = np.asarray(values, dtype=np.float64)
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    return lo_px + (v - lo) / span * (hi_px - lo_px), lo, hi


def _frame(title: str, xlabel: str, ylabel: str, width: int, height: int, body: list[str]) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{width / 2:.0f}" y="{height - 6}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">{escape(ylabel)}</text>',
        f'<rect x="50" y="30" width="{width - 70}" height="{height - 70}" fill="none" stroke="black"/>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def scatter_svg(path: str | Path, dist, ewma, labels, width: int = 480, height: int = 400) -> None:
    """Feature-space scatter, colored by label."""
    xs, x0, x1 = _scale(dist, 55, width - 25)
    ys, y0, y1 = _scale(ewma, height - 45, 35)
    body = [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" fill="{_COLORS.get(int(lab), "gray")}"/>'
            for x, y, lab in zip(xs, ys, labels)]
    body.append(f'<text x="55" y="{height - 28}" font-size="10">{x0:.3g}</text>')
    body.append(f'<text x="{width - 25}" y="{height - 28}" font-size="10" text-anchor="end">{x1:.3g}</text>')
    body.append(f'<text x="48" y="{height - 45}" font-size="10" text-anchor="end">{y0:.3g}</text>')
    body.append(f'<text x="48" y="40" font-size="10" text-anchor="end">{y1:.3g}</text>')
    Path(path).write_text(_frame("Dist vs EWMA", "Dist", "EWMA", width, height, body))


def series_svg(path: str | Path, dist, ewma, width: int = 720, height: int = 320) -> None:
    """Dist and its EWMA over time."""
    n = len(dist)
    xs, _, _ = _scale(np.arange(max(n, 1)), 55, width - 25)
    both = np.concatenate([np.asarray(dist, float), np.asarray(ewma, float)])
    _, lo, hi = _scale(both, 0, 1)
    span = hi - lo if hi > lo else 1.0

    def poly(values, color):
        ys = (height - 45) - (np.asarray(values, float) - lo) / span * (height - 80)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1"/>'

    body = [poly(dist, "#7f7f7f"), poly(ewma, "#d62728")] if n else []
    Path(path).write_text(_frame("Dist and EWMA per frame", "frame", "pixels", width, height, body))
