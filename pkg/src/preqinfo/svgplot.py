"""Minimal deterministic SVG line charts (log-x) for coding curves and sweeps."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT = 640, 400
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks_log(lo: float, hi: float) -> list[float]:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(a, b + 1) if lo <= 10.0 ** e <= hi] or [lo]


def _ticks_lin(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
        return f"{v:.0e}"
    return f"{v:g}"


def line_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], title: str = "",
               xlabel: str = "n", ylabel: str = "nats", logx: bool = True) -> str:
    """Render ``(label, xs, ys)`` series as one SVG document.

    Points with non-positive x are dropped on a log axis. The output depends
    only on the inputs, so identical inputs give identical bytes.
    """
    if not series:
        raise ValueError("nothing to plot")
    clean = []
    for label, xs, ys in series:
        if len(xs) != len(ys):
            raise ValueError(f"series {label!r}: x and y lengths differ")
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx)]
        clean.append((label, pts))
    allx = [p[0] for _, pts in clean for p in pts]
    ally = [p[1] for _, pts in clean for p in pts]
    if not allx:
        raise ValueError("no plottable points")
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(min(ally), 0.0), max(ally)
    if y1 == y0:
        y1 = y0 + 1.0
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    if fx(x1) == fx(x0):
        x1 = x0 * 10 if logx else x0 + 1
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (fx(x) - fx(x0)) / (fx(x1) - fx(x0)) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<g class="axes" stroke="black"><line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
               f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>')
    xt = _ticks_log(x0, x1) if logx else _ticks_lin(x0, x1)
    for t in xt:
        out.append(f'<g class="xtick"><line x1="{_fmt(px(t))}" y1="{top + ph}" x2="{_fmt(px(t))}" '
                   f'y2="{top + ph + 4}" stroke="black"/><text x="{_fmt(px(t))}" y="{top + ph + 16}" '
                   f'text-anchor="middle">{_label(t)}</text></g>')
    for t in _ticks_lin(y0, y1):
        out.append(f'<g class="ytick"><line x1="{left - 4}" y1="{_fmt(py(t))}" x2="{left}" y2="{_fmt(py(t))}" '
                   f'stroke="black"/><text x="{left - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{_label(t)}'
                   f'</text></g>')
    out.append(f'<text x="{left + pw // 2}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}'
               f'{" (log scale)" if logx else ""}</text>')
    out.append(f'<text x="14" y="{top + ph // 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph // 2})">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(clean):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                   f'<title>{escape(label)}</title></polyline>')
        ly = top + 14 * (i + 1)
        out.append(f'<g class="legend"><line x1="{left + pw - 140}" y1="{ly - 4}" x2="{left + pw - 120}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/><text x="{left + pw - 115}" y="{ly}">'
                   f'{escape(label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
