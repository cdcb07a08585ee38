"""Dependency-free SVG rendering of predicted vs. ground-truth trajectories.

Emits exactly two ``<polyline>`` elements (prediction and reference), a
start marker, a scale bar, and a caption carrying the trajectory metrics.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .evaluator import Trajectory

WIDTH = 640
HEIGHT = 560
MARGIN = 48
PLOT_HEIGHT = 480  # drawing area above the caption strip


def _nice_length(span: float) -> float:
    """Largest 1/2/5 x 10^k length not exceeding ~30% of the span."""
    target = max(span * 0.3, 1e-9)
    power = 10.0 ** np.floor(np.log10(target))
    for mult in (5.0, 2.0, 1.0):
        if mult * power <= target:
            return mult * power
    return power


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_trajectories(pred: Trajectory, gt: Trajectory, ate_m: float, rte_m: float,
                        interval_s: float, title: str = "") -> str:
    """SVG text overlaying the two 2D paths with metrics in the caption."""
    allpos = np.concatenate([pred.positions, gt.positions], axis=0)
    lo = allpos.min(axis=0)
    hi = allpos.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    usable_w = WIDTH - 2 * MARGIN
    usable_h = PLOT_HEIGHT - 2 * MARGIN
    scale = min(usable_w / span[0], usable_h / span[1])
    offset = np.array([
        MARGIN + (usable_w - span[0] * scale) / 2,
        MARGIN + (usable_h - span[1] * scale) / 2,
    ])

    def to_px(points: np.ndarray) -> np.ndarray:
        xy = (points - lo) * scale + offset
        xy[:, 1] = PLOT_HEIGHT - xy[:, 1]  # SVG y grows downward
        return xy

    def polyline(points: np.ndarray, color: str, dash: str = "") -> str:
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5"'
                f'{dash_attr} points="{coords}" />')

    gt_px = to_px(gt.positions)
    pred_px = to_px(pred.positions)
    start = gt_px[0]
    bar_m = _nice_length(float(span[0]))
    bar_px = bar_m * scale
    bar_y = PLOT_HEIGHT - MARGIN / 2
    caption = (f"ATE {ate_m:.3f} m | RTE {rte_m:.3f} m "
               f"(interval {_fmt(interval_s)} s)")
    if title:
        caption = f"{escape(title)} | {caption}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white" />',
        polyline(gt_px, "#555555", dash="6,4"),
        polyline(pred_px, "#1f6fd0"),
        f'<circle cx="{start[0]:.2f}" cy="{start[1]:.2f}" r="5" fill="#15a34a" />',
        f'<line x1="{MARGIN}" y1="{bar_y:.2f}" x2="{MARGIN + bar_px:.2f}" '
        f'y2="{bar_y:.2f}" stroke="black" stroke-width="2" />',
        f'<text x="{MARGIN}" y="{bar_y - 6:.2f}" font-size="12" '
        f'font-family="sans-serif">{_fmt(bar_m)} m</text>',
        f'<text x="{MARGIN}" y="{PLOT_HEIGHT + 28}" font-size="14" '
        f'font-family="sans-serif">{escape(caption)}</text>',
        f'<text x="{MARGIN}" y="{PLOT_HEIGHT + 50}" font-size="12" fill="#555555" '
        f'font-family="sans-serif">solid: predicted, dashed: reference, '
        f'dot: start</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
