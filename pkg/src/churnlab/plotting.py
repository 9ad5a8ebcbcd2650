"""Minimal self-contained SVG line charts for lift curves."""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def lift_chart_svg(curves: Mapping[str, Sequence[tuple[int, float]]], title: str = "",
                   width: int = 640, height: int = 420) -> str:
    if not curves or any(len(c) == 0 for c in curves.values()):
        raise ValueError("every curve needs at least one point")
    left, right, top, bottom = 60, 220, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [p for c in curves.values() for p, _ in c]
    ys = [v for c in curves.values() for _, v in c]
    x0, x1 = min(xs), max(xs)
    y1 = max(max(ys), 1.0) * 1.05
    if x1 == x0:
        x1 = x0 + 1

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - y / y1 * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for x in sorted(set(xs)):
        if x == x0 or x == x1 or x % 5 == 0:
            out.append(f'<text x="{sx(x):.1f}" y="{top + ph + 16}" text-anchor="middle">{x}</text>')
    n_ticks = 5
    for k in range(n_ticks + 1):
        v = y1 * k / n_ticks
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
        out.append(f'<line x1="{left}" y1="{sy(v):.1f}" x2="{left + pw}" y2="{sy(v):.1f}" '
                   f'stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">percentile</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">lift</text>')
    for k, (name, pts) in enumerate(curves.items()):
        color = PALETTE[k % len(PALETTE)]
        path = " ".join(f"{sx(p):.2f},{sy(v):.2f}" for p, v in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{path}"/>')
        ly = top + 12 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
