"""Tiny SVG writers for line charts and histograms (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 480, 320
ML, MR, MT, MB = 60, 110, 30, 45


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    a = abs(v)
    return f"{v:.0e}" if a >= 1e4 or a < 1e-2 else f"{v:.3g}"


def _scale(lo, hi, a, b, log=False):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (b - a) * (((math.log10(v) if log else v) - lo) / (hi - lo))


def _frame(title, xlabel, ylabel):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{(ML + W - MR) / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{(ML + W - MR) / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="14" y="{(MT + H - MB) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {(MT + H - MB) / 2})">{escape(ylabel)}</text>',
            f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>']


def _ticks(parts, sx, sy, xs, ys):
    for v in xs:
        parts.append(f'<text x="{sx(v):.1f}" y="{H - MB + 14}" text-anchor="middle">{_fmt(v)}</text>')
    for v in ys:
        parts.append(f'<text x="{ML - 4}" y="{sy(v) + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')


def line_chart(path, series: dict, title="", xlabel="", ylabel="", logx=False) -> None:
    """``series`` maps a label to a list of ``(x, y)`` points."""
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(y) and (x > 0 or not logx)]
    parts = _frame(title, xlabel, ylabel)
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        sx = _scale(min(xs), max(xs), ML + 10, W - MR - 10, logx)
        sy = _scale(min(ys), max(ys), H - MB - 10, MT + 10)
        _ticks(parts, sx, sy, sorted(set([min(xs), max(xs)])), sorted(set([min(ys), max(ys)])))
        for i, (label, s) in enumerate(series.items()):
            col = PALETTE[i % len(PALETTE)]
            good = [(x, y) for x, y in s if math.isfinite(y) and (x > 0 or not logx)]
            if good:
                d = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in good)
                parts.append(f'<polyline points="{d}" fill="none" stroke="{col}" stroke-width="1.5"/>')
                parts += [f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" fill="{col}"/>' for x, y in good]
            ly = MT + 14 * (i + 1)
            parts.append(f'<line x1="{W - MR + 8}" y1="{ly - 4}" x2="{W - MR + 22}" y2="{ly - 4}" stroke="{col}" stroke-width="2"/>')
            parts.append(f'<text x="{W - MR + 26}" y="{ly}">{escape(str(label))}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def histogram(path, counts, edges, title="", xlabel="", ylabel="count", reference: float | None = None) -> None:
    """Bar chart of precomputed ``counts`` over ``edges``; optional horizontal reference line."""
    parts = _frame(title, xlabel, ylabel)
    top = max(max(counts, default=0), reference or 0, 1)
    sx = _scale(edges[0], edges[-1], ML, W - MR)
    sy = _scale(0, top * 1.1, H - MB, MT)
    _ticks(parts, sx, sy, [edges[0], edges[-1]], [0, top])
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        parts.append(f'<rect x="{sx(a) + 1:.1f}" y="{sy(c):.1f}" width="{sx(b) - sx(a) - 2:.1f}" '
                     f'height="{sy(0) - sy(c):.1f}" fill="{PALETTE[0]}"/>')
    if reference is not None:
        parts.append(f'<line x1="{ML}" y1="{sy(reference):.1f}" x2="{W - MR}" y2="{sy(reference):.1f}" '
                     f'stroke="{PALETTE[1]}" stroke-dasharray="4 3"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
