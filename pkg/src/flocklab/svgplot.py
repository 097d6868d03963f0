"""Minimal self-contained SVG line plots (polyline + axes + legend).

Figure reproduction must not depend on an external plotting stack, so this
writes plain SVG 1.1 by hand: fixed palette, linear axes with a handful of
ticks, optional multi-panel grid layout.  Output is deterministic for
identical input data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = ["Series", "Panel", "render_panel", "render_grid", "write_svg"]

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#7f7f7f"]

_MARGIN = {"left": 54, "right": 12, "top": 26, "bottom": 38}


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    dashed: bool = False
    markers: bool = False
    line: bool = True

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have matching shapes")


@dataclass
class Panel:
    series: list
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 420
    height: int = 300


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / max(n - 1, 1)))
    for mult in (1, 2, 2.5, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * span:
        out.append(round(t, 12))
        t += step
    return out or [lo]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def _panel_svg(panel: Panel, x0: float, y0: float) -> list[str]:
    """SVG elements of one panel translated to (x0, y0)."""
    w, h = panel.width, panel.height
    ml, mr = _MARGIN["left"], _MARGIN["right"]
    mt, mb = _MARGIN["top"], _MARGIN["bottom"]
    pw, ph = w - ml - mr, h - mt - mb

    finite = [(s.x[np.isfinite(s.x) & np.isfinite(s.y)],
               s.y[np.isfinite(s.x) & np.isfinite(s.y)]) for s in panel.series]
    xs = np.concatenate([f[0] for f in finite]) if finite else np.array([0.0, 1.0])
    ys = np.concatenate([f[1] for f in finite]) if finite else np.array([0.0, 1.0])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    def sx(v):
        return x0 + ml + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return y0 + mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

    el = [f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="white"/>',
          f'<rect x="{x0 + ml}" y="{y0 + mt}" width="{pw}" height="{ph}" '
          f'fill="none" stroke="#333" stroke-width="1"/>']
    if panel.title:
        el.append(f'<text x="{x0 + ml + pw / 2:.1f}" y="{y0 + 16}" font-size="13" '
                  f'text-anchor="middle" font-family="sans-serif">{panel.title}</text>')

    for t in _ticks(x_lo, x_hi):
        px = sx(t)
        el.append(f'<line x1="{px:.1f}" y1="{sy(y_lo):.1f}" x2="{px:.1f}" '
                  f'y2="{sy(y_lo) + 4:.1f}" stroke="#333"/>')
        el.append(f'<text x="{px:.1f}" y="{sy(y_lo) + 16:.1f}" font-size="10" '
                  f'text-anchor="middle" font-family="sans-serif">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        py = sy(t)
        el.append(f'<line x1="{sx(x_lo) - 4:.1f}" y1="{py:.1f}" x2="{sx(x_lo):.1f}" '
                  f'y2="{py:.1f}" stroke="#333"/>')
        el.append(f'<text x="{sx(x_lo) - 6:.1f}" y="{py + 3:.1f}" font-size="10" '
                  f'text-anchor="end" font-family="sans-serif">{_fmt(t)}</text>')
    if panel.xlabel:
        el.append(f'<text x="{x0 + ml + pw / 2:.1f}" y="{y0 + h - 6}" font-size="11" '
                  f'text-anchor="middle" font-family="sans-serif">{panel.xlabel}</text>')
    if panel.ylabel:
        cx, cy = x0 + 14, y0 + mt + ph / 2
        el.append(f'<text x="{cx}" y="{cy:.1f}" font-size="11" text-anchor="middle" '
                  f'font-family="sans-serif" transform="rotate(-90 {cx} {cy:.1f})">'
                  f'{panel.ylabel}</text>')

    for k, s in enumerate(panel.series):
        color = PALETTE[k % len(PALETTE)]
        xv, yv = finite[k]
        if xv.size == 0:
            continue
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        if s.line:
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xv, yv))
            el.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                      f'stroke-width="1.4"{dash}/>')
        if s.markers:
            for a, b in zip(xv, yv):
                el.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" '
                          f'fill="{color}"/>')
        if s.label:
            ly = y0 + mt + 14 + 14 * k
            el.append(f'<line x1="{x0 + ml + 8}" y1="{ly - 4:.1f}" x2="{x0 + ml + 30}" '
                      f'y2="{ly - 4:.1f}" stroke="{color}" stroke-width="1.4"{dash}/>')
            el.append(f'<text x="{x0 + ml + 34}" y="{ly:.1f}" font-size="10" '
                      f'font-family="sans-serif">{s.label}</text>')
    return el


def render_panel(panel: Panel) -> str:
    body = "\n".join(_panel_svg(panel, 0, 0))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{panel.width}" '
            f'height="{panel.height}" viewBox="0 0 {panel.width} {panel.height}">\n'
            f"{body}\n</svg>\n")


def render_grid(panels: Sequence[Panel], n_cols: int) -> str:
    """Lay panels out row-major on a fixed grid."""
    if not panels:
        raise ValueError("need at least one panel")
    pw = max(p.width for p in panels)
    ph = max(p.height for p in panels)
    n_rows = (len(panels) + n_cols - 1) // n_cols
    parts = []
    for i, p in enumerate(panels):
        r, c = divmod(i, n_cols)
        parts.extend(_panel_svg(p, c * pw, r * ph))
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{n_cols * pw}" '
            f'height="{n_rows * ph}" viewBox="0 0 {n_cols * pw} {n_rows * ph}">\n'
            f"{body}\n</svg>\n")


def write_svg(path, content: str) -> None:
    with open(path, "w") as fh:
        fh.write(content)
