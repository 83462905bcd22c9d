"""Standalone SVG line charts with no plotting dependency.

Output is plain text built with fixed number formatting, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

# Series colours are assigned by position, so a given plot spec always gets
# the same colours.
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def moving_average(x, window: int) -> np.ndarray:
    """Centred moving average, truncated at the edges.

    Point i averages x[i - (w-1)//2 : i + w//2 + 1]; near either end only the
    available values are averaged. NaNs are skipped (and stay NaN if the whole
    window is NaN).
    """
    if int(window) != window or window < 1:
        raise ValueError(f"smoothing window must be an integer >= 1, got {window!r}")
    x = np.asarray(x, dtype=float)
    if window == 1 or len(x) == 0:
        return x.copy()
    lo, hi = (window - 1) // 2, window // 2
    ok = np.isfinite(x)
    vals = np.where(ok, x, 0.0)
    cs = np.concatenate([[0.0], np.cumsum(vals)])
    cn = np.concatenate([[0], np.cumsum(ok)])
    i = np.arange(len(x))
    a = np.clip(i - lo, 0, len(x))
    b = np.clip(i + hi + 1, 0, len(x))
    n = cn[b] - cn[a]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (cs[b] - cs[a]) / n
    return np.where(n > 0, out, np.nan)


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray


@dataclass
class PlotSpec:
    inputs: Sequence[str]
    series: Sequence[str]
    smooth: int = 1
    output: str = "plot.svg"
    title: str = ""
    normalize: bool = False
    extra: list = field(default_factory=list)

    def __post_init__(self):
        if int(self.smooth) != self.smooth or self.smooth < 1:
            raise ValueError(f"smoothing window must be >= 1, got {self.smooth!r}")
        if not self.series:
            raise ValueError("at least one series is required")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(float(t))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    if v == 0:
        return "0"
    return f"{v:.4g}"


def render_svg(series: Sequence[Series], title: str = "", width: int = 720, height: int = 400,
               x_label: str = "step", y_label: str = "") -> str:
    left, right, top, bottom = 70, 20, 40 if title else 20, 50
    legend_h = 18 * len(series)
    pw, ph = width - left - right, height - top - bottom - legend_h
    finite_x = [s.x[np.isfinite(s.y)] for s in series]
    finite_y = [s.y[np.isfinite(s.y)] for s in series]
    all_x = np.concatenate(finite_x) if finite_x else np.array([])
    all_y = np.concatenate(finite_y) if finite_y else np.array([])
    if len(all_x) == 0:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    else:
        x0, x1 = float(all_x.min()), float(all_x.max())
        y0, y1 = float(all_y.min()), float(all_y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        pad = abs(y0) * 0.05 or 1.0
        y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{_fmt(X)}" y1="{_fmt(top + ph)}" x2="{_fmt(X)}" y2="{_fmt(top + ph + 4)}" stroke="black"/>')
        out.append(f'<text x="{_fmt(X)}" y="{_fmt(top + ph + 16)}" text-anchor="middle">{_label(t)}</text>')
    for t in _nice_ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{left - 4}" y1="{_fmt(Y)}" x2="{left}" y2="{_fmt(Y)}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{_fmt(Y)}" x2="{left + pw}" y2="{_fmt(Y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(Y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{_fmt(top + ph + 34)}" text-anchor="middle">{escape(x_label)}</text>')
    if y_label:
        out.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.2f})">{escape(y_label)}</text>')
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(s.y)
        # break the line at missing values
        segments, cur = [], []
        for xv, yv, good in zip(s.x, s.y, ok):
            if good:
                cur.append(f"{_fmt(px(xv))},{_fmt(py(yv))}")
            elif cur:
                segments.append(cur)
                cur = []
        if cur:
            segments.append(cur)
        for seg in segments:
            if len(seg) == 1:
                x, y = seg[0].split(",")
                out.append(f'<circle cx="{x}" cy="{y}" r="2" fill="{color}"/>')
            else:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{" ".join(seg)}"/>')
        ly = top + ph + bottom - 6 + 18 * k
        out.append(f'<line x1="{left}" y1="{ly - 4}" x2="{left + 24}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 30}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def load_series(path, names: Sequence[str]) -> dict:
    """Columns from a steps.jsonl file or a ``step,value`` trace CSV.

    For a CSV the single ``value`` column answers to any requested name.
    Missing names raise ``KeyError`` naming the series.
    """
    from . import serialize  # local import keeps this module cheap
    from .criteria import read_trace

    path = Path(path)
    if path.suffix == ".csv":
        tr = read_trace(path)
        return {n: (tr.steps.astype(float), tr.values) for n in names}
    rows = serialize.read_jsonl(path)
    out = {}
    for n in names:
        if rows and not all(n in r for r in rows):
            raise KeyError(n)
        if not rows:
            raise KeyError(n)
        steps = np.array([r.get("step", i + 1) for i, r in enumerate(rows)], dtype=float)
        vals = np.array([np.nan if r[n] is None else r[n] for r in rows], dtype=float)
        out[n] = (steps, vals)
    return out


def plot(spec: PlotSpec) -> str:
    """Render ``spec`` and write it; returns the SVG text."""
    series = []
    multi = len(spec.inputs) > 1
    for path in spec.inputs:
        cols = load_series(path, spec.series)
        for name in spec.series:
            x, y = cols[name]
            y = moving_average(y, spec.smooth)
            if spec.normalize:
                fin = y[np.isfinite(y)]
                if len(fin) and fin.max() > fin.min():
                    y = (y - fin.min()) / (fin.max() - fin.min())
            label = f"{Path(path).parent.name or Path(path).stem}:{name}" if multi else name
            series.append(Series(label, x, y))
    series.extend(spec.extra)
    svg = render_svg(series, title=spec.title)
    Path(spec.output).write_text(svg, encoding="utf-8")
    return svg


def grid_svg(panels: Sequence[tuple], columns: int = 2, panel_w: int = 420, panel_h: int = 300) -> str:
    """Tile several ``(title, [Series])`` panels into one SVG."""
    rows = (len(panels) + columns - 1) // columns
    W, H = columns * panel_w, max(rows, 1) * panel_h
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">']
    for k, (title, series) in enumerate(panels):
        r, c = divmod(k, columns)
        inner = render_svg(series, title=title, width=panel_w, height=panel_h)
        inner = inner.replace('<svg xmlns="http://www.w3.org/2000/svg" ', f'<svg x="{c * panel_w}" y="{r * panel_h}" ', 1)
        out.append(inner.rstrip("\n"))
    out.append("</svg>")
    return "\n".join(out) + "\n"
