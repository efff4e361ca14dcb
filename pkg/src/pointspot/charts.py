"""Tiny deterministic SVG charts (loss curves, per-class score bars).

Hand-rolled so that identical inputs give byte-identical files.
"""

from __future__ import annotations

from typing import Sequence

_W, _H = 640, 400
_MARGIN = 50
_COLORS = ("#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4", "#46f0f0")


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def line_chart(series: dict[str, Sequence[float]], title: str,
               x_label: str = "epoch", y_label: str = "") -> bytes:
    """Multi-series line chart; x is the sample index."""
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    values = [v for vs in series.values() for v in vs]
    if values:
        lo, hi = min(values), max(values)
        if hi == lo:
            hi = lo + 1.0
        n = max(len(vs) for vs in series.values())
        span_x = _W - 2 * _MARGIN
        span_y = _H - 2 * _MARGIN

        def sx(i: int) -> float:
            return _MARGIN + (span_x * i / max(n - 1, 1))

        def sy(v: float) -> float:
            return _H - _MARGIN - span_y * (v - lo) / (hi - lo)

        parts.append(f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
                     f'y2="{_H - _MARGIN}" stroke="black"/>')
        parts.append(f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
                     f'y2="{_H - _MARGIN}" stroke="black"/>')
        parts.append(f'<text x="{_MARGIN - 8}" y="{_H - _MARGIN}" text-anchor="end" '
                     f'font-size="10">{_fmt(lo)}</text>')
        parts.append(f'<text x="{_MARGIN - 8}" y="{_MARGIN + 4}" text-anchor="end" '
                     f'font-size="10">{_fmt(hi)}</text>')
        parts.append(f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" '
                     f'font-size="11">{x_label}</text>')
        for s, (name, vs) in enumerate(sorted(series.items())):
            color = _COLORS[s % len(_COLORS)]
            pts = " ".join(f"{_fmt(sx(i))},{_fmt(sy(v))}" for i, v in enumerate(vs))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"/>')
            parts.append(f'<text x="{_W - _MARGIN + 4}" y="{_MARGIN + 14 * s}" '
                         f'font-size="10" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts).encode("utf-8")


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str) -> bytes:
    """Vertical bars in [0, 1] (score charts)."""
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    n = len(labels)
    if n:
        span_x = _W - 2 * _MARGIN
        span_y = _H - 2 * _MARGIN
        bw = span_x / n * 0.7
        for i, (label, v) in enumerate(zip(labels, values)):
            x = _MARGIN + span_x * (i + 0.15) / n
            h = span_y * max(0.0, min(1.0, v))
            y = _H - _MARGIN - h
            parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bw)}" '
                         f'height="{_fmt(h)}" fill="{_COLORS[i % len(_COLORS)]}"/>')
            parts.append(f'<text x="{_fmt(x + bw / 2)}" y="{_fmt(y - 4)}" '
                         f'text-anchor="middle" font-size="9">{_fmt(v)}</text>')
            parts.append(f'<text x="{_fmt(x + bw / 2)}" y="{_H - _MARGIN + 14}" '
                         f'text-anchor="middle" font-size="9">{label}</text>')
        parts.append(f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
                     f'y2="{_H - _MARGIN}" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts).encode("utf-8")
