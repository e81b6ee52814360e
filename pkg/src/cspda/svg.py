"""Minimal deterministic SVG line plots with mean +/- std bands."""
from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


@dataclass
class Series:
    label: str
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray | None = None


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e4 or abs(v) < 1e-3):
        return f"{v:.0e}"
    return f"{v:.4g}"


def render(series: list[Series], title: str, xlabel: str, ylabel: str, hline: float | None = None) -> str:
    xs = np.concatenate([s.x for s in series])
    lows = [s.mean - (s.std if s.std is not None else 0) for s in series]
    highs = [s.mean + (s.std if s.std is not None else 0) for s in series]
    y_lo = float(min(np.min(v) for v in lows))
    y_hi = float(max(np.max(v) for v in highs))
    if hline is not None:
        y_lo, y_hi = min(y_lo, hline), max(y_hi, hline)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (np.asarray(x, dtype=float) - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return TOP + (y_hi - np.asarray(y, dtype=float)) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(y_lo, y_hi):
        y = _fmt(py(t))
        out.append(f'<line x1="{LEFT}" y1="{y}" x2="{LEFT + pw}" y2="{y}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">{_label(t)}</text>')
    for t in _ticks(x_lo, x_hi):
        x = _fmt(px(t))
        out.append(f'<text x="{x}" y="{TOP + ph + 16}" text-anchor="middle">{_label(t)}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + ph / 2})">{escape(ylabel)}</text>'
    )
    if hline is not None:
        y = _fmt(py(hline))
        out.append(f'<line x1="{LEFT}" y1="{y}" x2="{LEFT + pw}" y2="{y}" stroke="black" stroke-dasharray="4 3"/>')

    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        X = px(s.x)
        if s.std is not None:
            upper = py(s.mean + s.std)
            lower = py(s.mean - s.std)
            pts = [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(X, upper)]
            pts += [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(X[::-1], lower[::-1])]
            out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(X, py(s.mean)))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 14 + 16 * k
        out.append(f'<line x1="{LEFT + pw - 120}" y1="{ly}" x2="{LEFT + pw - 100}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw - 95}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
