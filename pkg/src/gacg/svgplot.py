"""Hand-rolled SVG 1.1 line plots for metrics CSVs — no plotting stack.

Runs are grouped by label (the run_id persisted beside each metrics file,
or the parent directory name as a fallback); each group draws a mean curve
plus a min/max band across its members, interpolated onto a shared step
grid.  The file is written only after every input parses cleanly.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .errors import IntegrityError, ParameterError
from .metrics import read_metrics

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 160, 24, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")
GRID_POINTS = 128


def run_label(csv_path: str) -> str:
    """Group key for a metrics file: sibling config's run_id, else dir name."""
    sibling = os.path.join(os.path.dirname(csv_path), "config.json")
    if os.path.exists(sibling):
        try:
            with open(sibling, encoding="utf-8") as fh:
                run_id = json.load(fh).get("run_id")
            if isinstance(run_id, str) and run_id:
                return run_id
        except (OSError, json.JSONDecodeError):
            pass
    parent = os.path.basename(os.path.dirname(os.path.abspath(csv_path)))
    return parent or os.path.splitext(os.path.basename(csv_path))[0]


def _scale(lo: float, hi: float, pixels_lo: float, pixels_hi: float):
    span = hi - lo if hi > lo else 1.0

    def to_px(v):
        return pixels_lo + (v - lo) / span * (pixels_hi - pixels_lo)

    return to_px


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return list(np.linspace(lo, hi, count))


def _fmt(v: float) -> str:
    if abs(v) >= 1000:
        return f"{v:.0f}"
    return f"{v:.3g}"


def emit_plot(csv_paths: list[str], out_path: str, x_col: str = "step",
              y_col: str = "capture_rate") -> str:
    """Render grouped mean curves with min/max bands into an SVG file."""
    if not csv_paths:
        raise ParameterError("no metrics files given")
    groups: dict[str, list[dict]] = {}
    for path in csv_paths:
        data = read_metrics(path, required=(x_col, y_col))
        if len(data[x_col]) < 1:
            raise IntegrityError(f"metrics file {path} has no rows")
        groups.setdefault(run_label(path), []).append(data)

    all_x = np.concatenate([d[x_col] for runs in groups.values() for d in runs])
    all_y = np.concatenate([d[y_col] for runs in groups.values() for d in runs])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(min(all_y.min(), 0.0)), float(all_y.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    y_pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    to_px_x = _scale(x_lo, x_hi, MARGIN_L, WIDTH - MARGIN_R)
    to_px_y = _scale(y_lo, y_hi, HEIGHT - MARGIN_B, MARGIN_T)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    axis_style = 'stroke="#333" stroke-width="1"'
    parts.append(f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" '
                 f'x2="{WIDTH - MARGIN_R}" y2="{HEIGHT - MARGIN_B}" {axis_style}/>')
    parts.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" '
                 f'x2="{MARGIN_L}" y2="{HEIGHT - MARGIN_B}" {axis_style}/>')
    for tick in _ticks(x_lo, x_hi):
        px = to_px_x(tick)
        parts.append(f'<line x1="{px:.1f}" y1="{HEIGHT - MARGIN_B}" '
                     f'x2="{px:.1f}" y2="{HEIGHT - MARGIN_B + 5}" {axis_style}/>')
        parts.append(f'<text x="{px:.1f}" y="{HEIGHT - MARGIN_B + 18}" '
                     f'font-size="11" text-anchor="middle">{_fmt(tick)}</text>')
    for tick in _ticks(y_lo, y_hi):
        py = to_px_y(tick)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.1f}" '
                     f'x2="{MARGIN_L}" y2="{py:.1f}" {axis_style}/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py + 4:.1f}" '
                     f'font-size="11" text-anchor="end">{_fmt(tick)}</text>')
    parts.append(f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) / 2:.1f}" '
                 f'y="{HEIGHT - 8}" font-size="13" '
                 f'text-anchor="middle">{x_col}</text>')
    parts.append(f'<text x="16" y="{(MARGIN_T + HEIGHT - MARGIN_B) / 2:.1f}" '
                 f'font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 16 {(MARGIN_T + HEIGHT - MARGIN_B) / 2:.1f})">'
                 f'{y_col}</text>')

    for gi, (label, runs) in enumerate(sorted(groups.items())):
        color = PALETTE[gi % len(PALETTE)]
        if len(runs) == 1:
            xs, ys = runs[0][x_col], runs[0][y_col]
            order = np.argsort(xs, kind="stable")
            mean_xy = list(zip(xs[order], ys[order]))
        else:
            grid = np.linspace(x_lo, x_hi, GRID_POINTS)
            stack = []
            for data in runs:
                order = np.argsort(data[x_col], kind="stable")
                stack.append(np.interp(grid, data[x_col][order],
                                       data[y_col][order]))
            stack = np.array(stack)
            lo, hi, mean = stack.min(0), stack.max(0), stack.mean(0)
            band = [(x, y) for x, y in zip(grid, hi)]
            band += [(x, y) for x, y in zip(grid[::-1], lo[::-1])]
            pts = " ".join(f"{to_px_x(x):.1f},{to_px_y(y):.1f}" for x, y in band)
            parts.append(f'<polygon points="{pts}" fill="{color}" '
                         f'fill-opacity="0.18" stroke="none"/>')
            mean_xy = list(zip(grid, mean))
        pts = " ".join(f"{to_px_x(x):.1f},{to_px_y(y):.1f}" for x, y in mean_xy)
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.8"/>')
        ly = MARGIN_T + 16 + 18 * gi
        lx = WIDTH - MARGIN_R + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="1.8"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="12">{label}</text>')

    parts.append("</svg>")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
    return out_path
