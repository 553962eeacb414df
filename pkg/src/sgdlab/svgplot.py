"""Minimal static SVG line plots with optional log axes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str = PALETTE[0]
    width: float = 1.5
    opacity: float = 1.0
    dash: str | None = None
    markers: bool = False


@dataclass
class Figure:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    width: int = 640
    height: int = 440
    series: list = field(default_factory=list)

    def add(self, x, y, **kw) -> "Figure":
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), **kw))
        return self

    def _tx(self, v, log):
        v = np.asarray(v, float)
        return np.log10(np.maximum(v, 1e-300)) if log else v

    def render(self) -> str:
        ml, mr, mt, mb = 70, 20, 36, 50
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs, ys = [], []
        for s in self.series:
            keep = np.isfinite(s.x) & np.isfinite(s.y)
            if self.logx:
                keep &= s.x > 0
            if self.logy:
                keep &= s.y > 0
            xs.append(self._tx(s.x[keep], self.logx))
            ys.append(self._tx(s.y[keep], self.logy))
        allx = np.concatenate(xs) if xs else np.zeros(1)
        ally = np.concatenate(ys) if ys else np.zeros(1)
        if allx.size == 0:
            allx = ally = np.zeros(1)
        x0, x1 = _pad(float(allx.min()), float(allx.max()))
        y0, y1 = _pad(float(ally.min()), float(ally.max()))

        def px(v):
            return ml + (v - x0) / (x1 - x0) * pw

        def py(v):
            return mt + ph - (v - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
        for v in _ticks(x0, x1, self.logx):
            out.append(f'<line x1="{px(v):.2f}" y1="{mt + ph}" x2="{px(v):.2f}" y2="{mt + ph + 4}" stroke="#333"/>')
            out.append(f'<text x="{px(v):.2f}" y="{mt + ph + 16}" text-anchor="middle">{_label(v, self.logx)}</text>')
        for v in _ticks(y0, y1, self.logy):
            out.append(f'<line x1="{ml - 4}" y1="{py(v):.2f}" x2="{ml}" y2="{py(v):.2f}" stroke="#333"/>')
            out.append(f'<text x="{ml - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{_label(v, self.logy)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{self.height - 12}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {mt + ph / 2})">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        legend_y = mt + 14
        for s, x, y in zip(self.series, xs, ys):
            if x.size == 0:
                continue
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" stroke-width="{s.width}" '
                       f'stroke-opacity="{s.opacity}"{dash}/>')
            if s.markers:
                out.extend(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{s.color}"/>'
                           for a, b in zip(x, y))
            if s.label:
                out.append(f'<line x1="{ml + pw - 150}" y1="{legend_y - 4}" x2="{ml + pw - 130}" '
                           f'y2="{legend_y - 4}" stroke="{s.color}" stroke-width="2"{dash}/>')
                out.append(f'<text x="{ml + pw - 125}" y="{legend_y}">{escape(s.label)}</text>')
                legend_y += 14
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _pad(lo, hi):
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    m = 0.03 * (hi - lo)
    return lo - m, hi + m


def _ticks(lo, hi, log):
    if log:
        step = max(1, math.ceil((hi - lo) / 8))
        first = math.ceil(lo)
        return [float(v) for v in range(first, math.floor(hi) + 1, step)]
    raw = (hi - lo) / 6
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=mag)
    return list(np.arange(math.ceil(lo / step) * step, hi + 1e-12, step))


def _label(v, log):
    if log:
        return f"1e{int(round(v))}"
    return f"{v:.3g}"
