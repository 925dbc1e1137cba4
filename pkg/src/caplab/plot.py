"""Minimal SVG line plots (axes, optional log scales, polyline series)."""

from __future__ import annotations

import math

__all__ = ["line_plot"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo, hi, log):
    if log:
        return [10.0**e for e in range(math.floor(lo), math.ceil(hi) + 1)]
    step = 10 ** math.floor(math.log10(hi - lo)) if hi > lo else 1.0
    start = math.floor(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 2)]


def line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", logx: bool = True,
              logy: bool = True, width: int = 480, height: int = 360) -> str:
    """Render ``{name: (xs, ys)}`` as an SVG document; non-positive values are dropped on log axes."""
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(x, y) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx) and (y > 0 or not logy)]
        pts[name] = [(math.log10(x) if logx else x, math.log10(y) if logy else y) for x, y in keep]
    allp = [p for v in pts.values() for p in v] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 64, 120, 32, 48
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{ml + pw / 2:.2f}" y="18" text-anchor="middle">{title}</text>')
    for t in _ticks(x0, x1, False):
        if x0 <= t <= x1:
            lab = f"1e{t:g}" if logx else f"{t:g}"
            out.append(f'<line x1="{_fmt(sx(t))}" y1="{_fmt(mt + ph)}" x2="{_fmt(sx(t))}" y2="{_fmt(mt + ph + 4)}" '
                       f'stroke="black"/><text x="{_fmt(sx(t))}" y="{_fmt(mt + ph + 16)}" '
                       f'text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1, False):
        if y0 <= t <= y1:
            lab = f"1e{t:g}" if logy else f"{t:g}"
            out.append(f'<line x1="{ml - 4}" y1="{_fmt(sy(t))}" x2="{ml}" y2="{_fmt(sy(t))}" stroke="black"/>'
                       f'<text x="{ml - 6}" y="{_fmt(sy(t) + 4)}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2:.2f})">{ylabel}</text>')
    for n, (name, p) in enumerate(pts.items()):
        color = _COLORS[n % len(_COLORS)]
        if p:
            coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in p)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for x, y in p:
                out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2.5" fill="{color}"/>')
        ly = mt + 14 * (n + 1)
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 28}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="1.5"/><text x="{ml + pw + 32}" y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
