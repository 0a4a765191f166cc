"""Minimal deterministic SVG charts: line/marker panels and histograms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
PANEL_W, PANEL_H = 260, 200
MARGIN_L, MARGIN_B, MARGIN_T, MARGIN_R = 44, 34, 26, 10


def _f(v: float) -> str:
    return f"{v:.2f}"


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    style: str = "line"  # or "markers"
    color: str = PALETTE[0]


@dataclass
class Panel:
    title: str
    series: list[Series] = field(default_factory=list)
    xlim: tuple[float, float] = (0.0, 1.0)
    ylim: tuple[float, float] | None = None


class _Frame:
    def __init__(self, x0: float, y0: float, xlim, ylim):
        self.x0, self.y0 = x0, y0
        self.xlim, self.ylim = xlim, ylim
        self.w = PANEL_W - MARGIN_L - MARGIN_R
        self.h = PANEL_H - MARGIN_T - MARGIN_B

    def px(self, x: float) -> float:
        lo, hi = self.xlim
        return self.x0 + MARGIN_L + (x - lo) / (hi - lo) * self.w

    def py(self, y: float) -> float:
        lo, hi = self.ylim
        return self.y0 + MARGIN_T + (1 - (y - lo) / (hi - lo)) * self.h


def _auto_ylim(panel: Panel) -> tuple[float, float]:
    ys = [v for s in panel.series for v in s.y if np.isfinite(v)]
    if not ys:
        return (0.0, 1.0)
    lo, hi = min(ys), max(ys)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return (lo - pad, hi + pad)


def _axes(fr: _Frame, title: str) -> list[str]:
    out = [
        f'<rect x="{_f(fr.x0 + MARGIN_L)}" y="{_f(fr.y0 + MARGIN_T)}" width="{_f(fr.w)}" height="{_f(fr.h)}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{_f(fr.x0 + PANEL_W / 2)}" y="{_f(fr.y0 + 16)}" text-anchor="middle" font-size="12">{escape(title)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = fr.xlim[0] + frac * (fr.xlim[1] - fr.xlim[0])
        yv = fr.ylim[0] + frac * (fr.ylim[1] - fr.ylim[0])
        out.append(
            f'<text x="{_f(fr.px(xv))}" y="{_f(fr.y0 + PANEL_H - MARGIN_B + 14)}" text-anchor="middle" font-size="9">{xv:.3g}</text>'
        )
        out.append(
            f'<text x="{_f(fr.x0 + MARGIN_L - 4)}" y="{_f(fr.py(yv) + 3)}" text-anchor="end" font-size="9">{yv:.3g}</text>'
        )
    return out


def _series(fr: _Frame, s: Series) -> list[str]:
    pts = [(fr.px(x), fr.py(y)) for x, y in zip(s.x, s.y) if np.isfinite(y)]
    if not pts:
        return []
    if s.style == "markers":
        return [f'<circle cx="{_f(x)}" cy="{_f(y)}" r="2.2" fill="{s.color}"/>' for x, y in pts]
    path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
    return [f'<polyline points="{path}" fill="none" stroke="{s.color}" stroke-width="1.2"/>']


def _legend(x: float, y: float, series: Sequence[Series]) -> list[str]:
    out, seen = [], set()
    for s in series:
        if s.label in seen:
            continue
        seen.add(s.label)
        out.append(f'<rect x="{_f(x)}" y="{_f(y - 7)}" width="10" height="7" fill="{s.color}"/>')
        out.append(f'<text x="{_f(x + 14)}" y="{_f(y)}" font-size="9">{escape(s.label)}</text>')
        y += 12
    return out


def _document(width: float, height: float, body: list[str]) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif">\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def panels(panel_list: Sequence[Panel], legend: bool = True) -> str:
    """Panels laid out left to right with a shared legend underneath."""
    body = []
    for i, p in enumerate(panel_list):
        fr = _Frame(i * PANEL_W, 0.0, p.xlim, p.ylim or _auto_ylim(p))
        body += _axes(fr, p.title)
        for s in p.series:
            body += _series(fr, s)
    all_series = [s for p in panel_list for s in p.series]
    n_labels = len(dict.fromkeys(s.label for s in all_series)) if legend else 0
    if legend:
        body += _legend(MARGIN_L, PANEL_H + 10, all_series)
    return _document(max(1, len(panel_list)) * PANEL_W, PANEL_H + 12 * n_labels + 6, body)


def histogram(title: str, groups: dict[str, Sequence[float]], bins: int = 30) -> str:
    """Overlaid outline histograms of each group on shared bins."""
    vals = [v for g in groups.values() for v in g if np.isfinite(v)]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = {k: np.histogram([v for v in g if np.isfinite(v)], bins=edges)[0] for k, g in groups.items()}
    top = max([int(c.max()) for c in counts.values() if c.size] + [1])
    width = 2 * PANEL_W
    fr = _Frame(0.0, 0.0, (lo, hi), (0.0, top * 1.05))
    fr.w = width - MARGIN_L - MARGIN_R
    body = _axes(fr, title)
    series = []
    for i, (name, c) in enumerate(counts.items()):
        color = PALETTE[i % len(PALETTE)]
        xs, ys = [float(edges[0])], [0.0]
        for j, n in enumerate(c):
            xs += [float(edges[j]), float(edges[j + 1])]
            ys += [float(n), float(n)]
        xs.append(float(edges[-1]))
        ys.append(0.0)
        s = Series(name, xs, ys, "line", color)
        series.append(s)
        body += _series(fr, s)
    body += _legend(MARGIN_L, PANEL_H + 10, series)
    return _document(width, PANEL_H + 12 * len(series) + 6, body)
