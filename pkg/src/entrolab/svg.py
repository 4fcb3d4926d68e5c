"""Self-contained SVG line charts (no plotting dependency, deterministic output)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf"]
W, H, PAD = 640, 400, 60


def _ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def _fmt(v):
    return f"{v:.3g}"


def line_chart(path, series, title="", xlabel="", ylabel="", logx=False, logy=False) -> None:
    """Write ``series`` (list of ``(label, xs, ys)``) as an SVG line chart.

    Non-finite points (and non-positive ones on log axes) are skipped.
    """
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    cleaned = []
    for label, xs, ys in series:
        pts = []
        for x, y in zip(np.asarray(xs, float), np.asarray(ys, float)):
            if not (np.isfinite(x) and np.isfinite(y)):
                continue
            if (logx and x <= 0) or (logy and y <= 0):
                continue
            pts.append((tx(x), ty(y)))
        cleaned.append((label, pts))
    allpts = [p for _, pts in cleaned for p in pts] or [(0.0, 0.0)]
    x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
    y0, y1 = min(p[1] for p in allpts), max(p[1] for p in allpts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12 * max(1.0, abs(y0)):
        y0, y1 = y0 - 0.5, y1 + 0.5

    def X(v):
        return PAD + (v - x0) / (x1 - x0) * (W - 2 * PAD)

    def Y(v):
        return H - PAD - (v - y0) / (y1 - y0) * (H - 2 * PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>']
    for v in _ticks(x0, x1):
        lab = _fmt(10 ** v if logx else v)
        out.append(f'<text x="{X(v):.2f}" y="{H - PAD + 16}" text-anchor="middle">{lab}</text>')
    for v in _ticks(y0, y1):
        lab = _fmt(10 ** v if logy else v)
        out.append(f'<text x="{PAD - 6}" y="{Y(v) + 4:.2f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {H / 2})">{escape(ylabel)}</text>')
    for k, (label, pts) in enumerate(cleaned):
        color = PALETTE[k % len(PALETTE)]
        if pts:
            d = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>')
        ly = PAD + 14 * k
        out.append(f'<line x1="{W - PAD - 110}" y1="{ly}" x2="{W - PAD - 90}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - PAD - 85}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
