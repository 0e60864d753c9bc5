"""Minimal SVG charts: line plots for training curves, scatter and stacked bars for order profiles."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 400
ML, MR, MT, MB_ = 64, 150, 36, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _nice_range(lo: float, hi: float) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.04
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    span = hi - lo
    raw = span / k
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * span:
        out.append(round(v, 12))
        v += step
    return out


class _Frame:
    def __init__(self, x_range, y_range, title: str, xlabel: str, ylabel: str):
        self.x0, self.x1 = _nice_range(*x_range)
        self.y0, self.y1 = _nice_range(*y_range)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{ML + (W - ML - MR) / 2:.1f}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="16" y="{MT + (H - MT - MB_) / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {MT + (H - MT - MB_) / 2:.1f})">{escape(ylabel)}</text>',
            f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB_}" fill="none" stroke="#333"/>',
        ]
        for t in _ticks(self.x0, self.x1):
            x = self.sx(t)
            self.parts.append(f'<line x1="{x:.1f}" y1="{H - MB_}" x2="{x:.1f}" y2="{H - MB_ + 4}" stroke="#333"/>')
            self.parts.append(f'<text x="{x:.1f}" y="{H - MB_ + 16}" text-anchor="middle">{t:g}</text>')
        for t in _ticks(self.y0, self.y1):
            y = self.sy(t)
            self.parts.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="#333"/>')
            self.parts.append(f'<line x1="{ML}" y1="{y:.1f}" x2="{W - MR}" y2="{y:.1f}" stroke="#eee"/>')
            self.parts.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>')
        self.legend = 0

    def sx(self, v: float) -> float:
        return ML + (v - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def sy(self, v: float) -> float:
        return H - MB_ - (v - self.y0) / (self.y1 - self.y0) * (H - MT - MB_)

    def add_legend(self, label: str, color: str) -> None:
        y = MT + 12 + 16 * self.legend
        x = W - MR + 10
        self.parts.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        self.parts.append(f'<text x="{x + 14}" y="{y + 1}">{escape(label)}</text>')
        self.legend += 1

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _finite_extent(arrays, fallback=(0.0, 1.0)):
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]) if arrays else np.zeros(0)
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        return fallback
    return float(vals.min()), float(vals.max())


def line_plot(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str, xlabel: str, ylabel: str) -> str:
    """One polyline (with point markers) per named series; non-finite points are skipped."""
    xs = [s[0] for s in series.values()]
    ys = [s[1] for s in series.values()]
    f = _Frame(_finite_extent(xs), _finite_extent(ys), title, xlabel, ylabel)
    for i, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = [(f.sx(a), f.sy(b)) for a, b in zip(x, y) if math.isfinite(a) and math.isfinite(b)]
        if len(pts) > 1:
            path = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            f.parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, b in pts:
            f.parts.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{color}"/>')
        f.add_legend(label, color)
    return f.svg()


def scatter_plot(x: Sequence[float], y: Sequence[float], title: str, xlabel: str, ylabel: str, colors=None, legend=None) -> str:
    """Point cloud; ``colors`` is an optional per-point color list, ``legend`` maps label to color."""
    f = _Frame(_finite_extent([x]), _finite_extent([y]), title, xlabel, ylabel)
    for i, (a, b) in enumerate(zip(x, y)):
        c = colors[i] if colors is not None else PALETTE[0]
        f.parts.append(f'<circle cx="{f.sx(a):.1f}" cy="{f.sy(b):.1f}" r="1.6" fill="{c}"/>')
    for label, c in (legend or {}).items():
        f.add_legend(label, c)
    return f.svg()


def stacked_bars(counts: np.ndarray, labels: Sequence[str], title: str, xlabel: str, ylabel: str) -> str:
    """One bar per row of ``counts`` with the columns stacked in order."""
    counts = np.asarray(counts)
    n = len(counts)
    top = float(counts.sum(axis=1).max()) if n else 1.0
    f = _Frame((0.0, float(max(n, 1))), (0.0, top), title, xlabel, ylabel)
    width = (W - ML - MR) / max(n, 1)
    for i, row in enumerate(counts):
        base = 0.0
        for j, v in enumerate(row):
            if v <= 0:
                continue
            y_top = f.sy(base + v)
            h = f.sy(base) - y_top
            f.parts.append(
                f'<rect x="{f.sx(i):.2f}" y="{y_top:.2f}" width="{max(width * 0.9, 0.5):.2f}" height="{h:.2f}" fill="{PALETTE[j % len(PALETTE)]}"/>'
            )
            base += v
    for j, lab in enumerate(labels):
        f.add_legend(lab, PALETTE[j % len(PALETTE)])
    return f.svg()
