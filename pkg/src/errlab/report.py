"""Deterministic SVG line charts of MSE against days (train and test panels).

The SVG is written by hand: no timestamps, ids or float noise, so identical
results produce identical bytes.
"""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import MalformedResults
from .experiments import ResultTable

PANEL_W, PANEL_H = 360, 260
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 40, 50
LEGEND_W = 210
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
DASHES = {"lr": "6,3", "nn": ""}


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list:
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t < hi + step * 0.5:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return s.rstrip("0").rstrip(".") if "." in s else s


def series_from_table(table: ResultTable) -> dict:
    """(preparation, model) -> sorted list of (days, train_mean, test_mean)."""
    out: dict = {}
    for a in table.aggregate():
        if a["reps"] == 0:
            continue
        out.setdefault((a["preparation"], a["model"]), []).append(
            (a["days"], a["train_mean"], a["test_mean"]))
    return {key: sorted(pts) for key, pts in sorted(out.items())}


def build_svg(series: dict, title: str = "MSE by number of days") -> str:
    if not series:
        raise MalformedResults("no successful results to plot")
    days = sorted({d for pts in series.values() for d, _, _ in pts})
    values = [v for pts in series.values() for _, tr, te in pts for v in (tr, te)]
    yt = _nice_ticks(min(values), max(values))
    y0, y1 = yt[0], yt[-1]
    x0, x1 = (days[0] - 1, days[0] + 1) if len(days) == 1 else (days[0], days[-1])

    inner_w = PANEL_W - MARGIN_L - MARGIN_R
    inner_h = PANEL_H - MARGIN_T - MARGIN_B

    def px(d, panel):
        return panel * PANEL_W + MARGIN_L + (d - x0) / (x1 - x0) * inner_w

    def py(v):
        return MARGIN_T + (1 - (v - y0) / (y1 - y0)) * inner_h

    width, height = 2 * PANEL_W + LEGEND_W, PANEL_H
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for panel, name in enumerate(("train", "test")):
        left, right = px(x0, panel), px(x1, panel)
        top, bottom = py(y1), py(y0)
        out.append(f'<g class="panel-{name}">')
        out.append(f'<text x="{(left + right) / 2:.1f}" y="{MARGIN_T - 8}" text-anchor="middle">{name}</text>')
        out.append(f'<rect x="{left:.1f}" y="{top:.1f}" width="{right - left:.1f}" '
                   f'height="{bottom - top:.1f}" fill="none" stroke="#000000"/>')
        for t in yt:
            y = py(t)
            out.append(f'<line x1="{left:.1f}" y1="{y:.1f}" x2="{right:.1f}" y2="{y:.1f}" stroke="#dddddd"/>')
            out.append(f'<text x="{left - 4:.1f}" y="{y + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
        for d in days:
            x = px(d, panel)
            out.append(f'<line x1="{x:.1f}" y1="{bottom:.1f}" x2="{x:.1f}" y2="{bottom + 4:.1f}" stroke="#000000"/>')
            out.append(f'<text x="{x:.1f}" y="{bottom + 16:.1f}" text-anchor="middle">{d}</text>')
        out.append(f'<text x="{(left + right) / 2:.1f}" y="{bottom + 34:.1f}" text-anchor="middle">days</text>')
        if panel == 0:
            out.append(f'<text x="14" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
                       f'transform="rotate(-90 14 {(top + bottom) / 2:.1f})">MSE</text>')
        for i, ((prep, model), pts) in enumerate(series.items()):
            colour = PALETTE[i % len(PALETTE)]
            dash = DASHES.get(model, "2,2")
            coords = [(px(d, panel), py(tr if panel == 0 else te)) for d, tr, te in pts]
            if len(coords) > 1:
                path = " ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
                extra = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.5"{extra}/>')
            for x, y in coords:
                out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.5" fill="{colour}"/>')
        out.append("</g>")
    lx = 2 * PANEL_W + 10
    out.append('<g class="legend">')
    for i, (prep, model) in enumerate(series):
        y = MARGIN_T + 16 * i
        colour = PALETTE[i % len(PALETTE)]
        dash = DASHES.get(model, "2,2")
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 24}" y2="{y}" stroke="{colour}" stroke-width="1.5"{extra}/>')
        out.append(f'<text x="{lx + 30}" y="{y + 4}">{escape(f"{model.upper()} {prep}")}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(results_path, out_path, title: str | None = None) -> str:
    """Read a results CSV and write its SVG chart; returns the SVG text.

    Nothing is written when the results are empty or malformed.
    """
    table = ResultTable.read_csv(results_path)
    if not table.rows:
        raise MalformedResults(f"{results_path}: no result rows")
    svg = build_svg(series_from_table(table), title or Path(results_path).stem)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    return svg
