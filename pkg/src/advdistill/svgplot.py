"""Dependency-free SVG line plots for metric curves."""

from __future__ import annotations

import math

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * span:
        out.append(round(t, 12))
        t += step
    return out


def line_plot_svg(series: dict[str, tuple[list[float], list[float]]],
                  title: str = "", x_label: str = "", y_label: str = "",
                  width: int = 640, height: int = 400) -> str:
    """Render named (xs, ys) series as an SVG document string."""
    margin_l, margin_r, margin_t, margin_b = 60, 20, 36, 44
    pw = width - margin_l - margin_r
    ph = height - margin_t - margin_b
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        all_x, all_y = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin_l + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return margin_t + ph - (y - y_lo) / (y_hi - y_lo) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="monospace" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
             f'font-size="14">{title}</text>']
    # axes
    parts.append(f'<line x1="{margin_l}" y1="{margin_t + ph}" x2="{margin_l + pw}" '
                 f'y2="{margin_t + ph}" stroke="black"/>')
    parts.append(f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
                 f'y2="{margin_t + ph}" stroke="black"/>')
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<text x="{sx(t):.1f}" y="{margin_t + ph + 16}" '
                     f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<text x="{margin_l - 6}" y="{sy(t) + 4:.1f}" '
                     f'text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{margin_l + pw / 2:.1f}" y="{height - 8}" '
                 f'text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="14" y="{margin_t + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {margin_t + ph / 2:.1f})">{y_label}</text>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5" data-series="{name}"/>')
        parts.append(f'<text x="{margin_l + pw - 4}" y="{margin_t + 14 + 14 * i}" '
                     f'text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
