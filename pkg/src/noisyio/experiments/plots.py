"""Minimal deterministic SVG plots: reference, mean, a 2-std band and data markers."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..errors import IoError, ShapeError

WIDTH, HEIGHT = 520, 340
MARGIN = {"left": 64, "right": 16, "top": 32, "bottom": 48}


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _tick_label(v: float) -> str:
    s = f"{v:.3g}"
    return "0" if s in ("-0", "-0.0") else s


def _points(xs, ys) -> str:
    return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(xs, ys))


def render_svg(x, mean, std, reference=None, scatter=None, title: str = "", xlabel: str = "x",
               ylabel: str = "") -> str:
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if not x.shape == mean.shape == std.shape or x.ndim != 1:
        raise ShapeError("x, mean and std must be 1-D arrays of equal length")
    ref = None if reference is None else np.asarray(reference, dtype=np.float64)
    if ref is not None and ref.shape != x.shape:
        raise ShapeError("reference must live on the plotting grid")
    sx = sy = np.empty(0)
    if scatter is not None:
        sx = np.asarray(scatter[0], dtype=np.float64).ravel()
        sy = np.asarray(scatter[1], dtype=np.float64).ravel()
    lo, hi = mean - 2.0 * std, mean + 2.0 * std
    ally = np.concatenate([lo, hi] + ([ref] if ref is not None else []) + [sy])
    allx = np.concatenate([x, sx])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + (np.asarray(v) - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN["top"] + (y1 - np.asarray(v)) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    band_x = np.concatenate([px(x), px(x)[::-1]])
    band_y = np.concatenate([py(hi), py(lo)[::-1]])
    out.append(f'<polygon class="band" fill="#9ecae1" fill-opacity="0.6" stroke="none" '
               f'points="{_points(band_x, band_y)}"/>')
    if ref is not None:
        out.append(f'<polyline class="reference" fill="none" stroke="black" stroke-width="1.5" '
                   f'points="{_points(px(x), py(ref))}"/>')
    out.append(f'<polyline class="mean" fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="5,3" '
               f'points="{_points(px(x), py(mean))}"/>')
    for a, b in zip(px(sx), py(sy)):
        out.append(f'<circle class="data" cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="none" stroke="#2ca02c"/>')
    # axes
    bx, by = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{bx}" y1="{by}" x2="{bx + pw}" y2="{by}" stroke="black"/>')
    out.append(f'<line x1="{bx}" y1="{MARGIN["top"]}" x2="{bx}" y2="{by}" stroke="black"/>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{_fmt(px(v))}" y="{by + 16}" text-anchor="middle" font-size="11">{_tick_label(v)}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{bx - 6}" y="{_fmt(py(v) + 4)}" text-anchor="end" font-size="11">{_tick_label(v)}</text>')
    out.append(f'<text x="{bx + pw // 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{MARGIN["top"] + ph // 2}" text-anchor="middle" font-size="12" '
                   f'transform="rotate(-90 14 {MARGIN["top"] + ph // 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(path, x, mean, std, reference=None, scatter=None, title: str = "", xlabel: str = "x",
              ylabel: str = "") -> Path:
    """Write the SVG for one target; identical inputs give identical bytes."""
    text = render_svg(x, mean, std, reference, scatter, title, xlabel, ylabel)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write plot {path}: {exc}") from exc
    return path
