"""Self-contained SVG line charts for descent reports.

One `<polyline>` per series, axes with ticks and labels, a legend when the
chart carries more than one series. Output is plain text SVG so tests can
diff coordinates directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f")

_WIDTH, _HEIGHT = 720, 440
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 24, 28, 48


@dataclass(frozen=True)
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(series: Sequence[Series], x_label: str, y_label: str,
               title: str = "") -> str:
    """Render series as one SVG document string."""
    if not series:
        raise ValueError("chart needs at least one series")
    for s in series:
        if len(s.xs) != len(s.ys):
            raise ValueError(f"series {s.label!r} has mismatched x/y lengths")
        if len(s.xs) == 0:
            raise ValueError(f"series {s.label!r} is empty")
    xs_all = [x for s in series for x in s.xs]
    ys_all = [y for s in series for y in s.ys]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def px(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        # SVG y grows downward; invert so larger values sit higher
        return _MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{_WIDTH / 2:.1f}" y="18" text-anchor="middle" '
                     f'font-size="14" font-family="sans-serif">{title}</text>')

    axis_y = _MARGIN_T + plot_h
    parts.append(f'<line x1="{_MARGIN_L}" y1="{axis_y}" x2="{_MARGIN_L + plot_w}" '
                 f'y2="{axis_y}" stroke="black"/>')
    parts.append(f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
                 f'y2="{axis_y}" stroke="black"/>')
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        parts.append(f'<line x1="{x:.1f}" y1="{axis_y}" x2="{x:.1f}" '
                     f'y2="{axis_y + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{axis_y + 18}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        y = py(t)
        parts.append(f'<line x1="{_MARGIN_L - 5}" y1="{y:.1f}" x2="{_MARGIN_L}" '
                     f'y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{_fmt(t)}</text>')
    parts.append(f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_HEIGHT - 10}" '
                 f'text-anchor="middle" font-size="12" '
                 f'font-family="sans-serif">{x_label}</text>')
    parts.append(f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" '
                 f'text-anchor="middle" font-size="12" font-family="sans-serif" '
                 f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})">'
                 f'{y_label}</text>')

    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.xs, s.ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')

    legend_y = _MARGIN_T + 6
    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        y = legend_y + i * 16
        parts.append(f'<g class="legend-entry">'
                     f'<line x1="{_MARGIN_L + plot_w - 110}" y1="{y}" '
                     f'x2="{_MARGIN_L + plot_w - 90}" y2="{y}" stroke="{color}" '
                     f'stroke-width="2"/>'
                     f'<text x="{_MARGIN_L + plot_w - 84}" y="{y + 4}" '
                     f'font-size="11" font-family="sans-serif">{s.label}</text></g>')

    parts.append("</svg>")
    return "\n".join(parts)


def write_chart(path: str | Path, series: Sequence[Series], x_label: str,
                y_label: str, title: str = "") -> None:
    Path(path).write_text(line_chart(series, x_label, y_label, title))
