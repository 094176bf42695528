"""Minimal static SVG line plots for rate-distortion curves.

Hand-rolled on purpose: batch runs only need a self-contained artifact,
not a plotting stack.
"""

from __future__ import annotations

from pathlib import Path

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    import math

    raw = (hi - lo) / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12:
        out.append(round(t, 10))
        t += step
    return out


def line_plot_svg(path, series: dict[str, list[tuple[float, float]]],
                  x_label: str, y_label: str, title: str = "",
                  width: int = 640, height: int = 480):
    """Write one SVG with a polyline plus markers per named series."""
    pts_all = [p for pts in series.values() for p in pts]
    if not pts_all:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in pts_all]
    ys = [p[1] for p in pts_all]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_pad = 0.05 * (x_hi - x_lo or 1.0)
    y_pad = 0.05 * (y_hi - y_lo or 1.0)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    m_left, m_right, m_top, m_bot = 64, 16, 34, 48
    pw, ph = width - m_left - m_right, height - m_top - m_bot

    def sx(x):
        return m_left + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return m_top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{m_left}" y="{m_top}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#333"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{sx(tx):.1f}" y1="{m_top + ph}" x2="{sx(tx):.1f}" '
            f'y2="{m_top + ph + 5}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{sx(tx):.1f}" y="{m_top + ph + 18}" text-anchor="middle">{tx:g}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        parts.append(
            f'<line x1="{m_left - 5}" y1="{sy(ty):.1f}" x2="{m_left}" '
            f'y2="{sy(ty):.1f}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{m_left - 8}" y="{sy(ty) + 4:.1f}" text-anchor="end">{ty:g}</text>'
        )
    parts.append(
        f'<text x="{m_left + pw / 2}" y="{height - 10}" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{m_top + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {m_top + ph / 2})">{y_label}</text>'
    )
    if title:
        parts.append(
            f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>'
        )
    for i, (name, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        for x, y in pts:
            parts.append(
                f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>'
            )
        leg_y = m_top + 14 + 16 * i
        parts.append(
            f'<line x1="{m_left + pw - 130}" y1="{leg_y - 4}" '
            f'x2="{m_left + pw - 106}" y2="{leg_y - 4}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{m_left + pw - 100}" y="{leg_y}">{name}</text>')
    parts.append("</svg>\n")
    Path(path).write_text("\n".join(parts), encoding="utf-8")
