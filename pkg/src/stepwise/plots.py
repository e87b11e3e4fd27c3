"""SVG timelines (ground truth vs prediction per step lane) and PR curves."""
from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Mapping, Sequence

import numpy as np

from .evaluation import ActionSegment

SVG_NS = "http://www.w3.org/2000/svg"
GT_COLOR = "#2e8b57"
PRED_COLOR = "#d62728"

ET.register_namespace("", SVG_NS)


def _el(parent, tag, **attrs):
    return ET.SubElement(parent, f"{{{SVG_NS}}}{tag}", {k.replace("_", "-"): str(v) for k, v in attrs.items()})


def _svg(width: int, height: int) -> ET.Element:
    return ET.Element(
        f"{{{SVG_NS}}}svg",
        {"width": str(width), "height": str(height), "viewBox": f"0 0 {width} {height}", "version": "1.1"},
    )


def _to_string(root: ET.Element) -> str:
    return ET.tostring(root, encoding="unicode", xml_declaration=True)


def render_timeline(
    pred: Sequence[ActionSegment],
    gt: Sequence[ActionSegment],
    num_steps: int | None = None,
    title: str = "",
    width: int = 800,
    lane_height: int = 24,
) -> str:
    """One lane per step; ground truth drawn above prediction in each lane."""
    steps = num_steps or max([s.step_id for s in [*pred, *gt]], default=0)
    t_max = max([s.stop for s in [*pred, *gt]], default=1.0)
    left, right, top, bottom = 60, 20, 30, 40
    height = top + bottom + steps * lane_height
    scale = (width - left - right) / t_max
    root = _svg(width, height)
    if title:
        _el(root, "text", x=left, y=18, font_size=13).text = title
    axis_y = top + steps * lane_height
    _el(root, "line", x1=left, y1=axis_y, x2=width - right, y2=axis_y, stroke="black")
    for tick in np.linspace(0.0, t_max, 6):
        x = left + tick * scale
        _el(root, "line", x1=f"{x:.2f}", y1=axis_y, x2=f"{x:.2f}", y2=axis_y + 5, stroke="black")
        _el(root, "text", x=f"{x:.2f}", y=axis_y + 18, font_size=10, text_anchor="middle").text = f"{tick:.1f}"
    _el(root, "text", x=width // 2, y=height - 6, font_size=11, text_anchor="middle").text = "time (s)"
    for k in range(1, steps + 1):
        y = top + (k - 1) * lane_height
        _el(root, "text", x=left - 8, y=y + lane_height // 2 + 4, font_size=10, text_anchor="end").text = f"step {k}"
    half = lane_height / 2 - 2
    for segs, color, offset, cls in ((gt, GT_COLOR, 1, "gt"), (pred, PRED_COLOR, lane_height / 2 + 1, "pred")):
        for s in segs:
            y = top + (s.step_id - 1) * lane_height + offset
            _el(
                root, "rect", x=f"{left + s.start * scale:.2f}", y=f"{y:.2f}",
                width=f"{max(s.duration * scale, 0.5):.2f}", height=f"{half:.2f}", fill=color,
                **{"class": cls},
            )
    return _to_string(root)


def render_pr_curves(curves: Mapping[str, tuple[np.ndarray, np.ndarray]], title: str = "", size: int = 400) -> str:
    """``curves`` maps a label to (recall, precision) arrays."""
    pad = 40
    root = _svg(size + 2 * pad, size + 2 * pad)
    if title:
        _el(root, "text", x=pad, y=20, font_size=13).text = title
    _el(root, "rect", x=pad, y=pad, width=size, height=size, fill="none", stroke="black")
    _el(root, "text", x=pad + size // 2, y=size + 2 * pad - 8, font_size=11, text_anchor="middle").text = "recall"
    _el(root, "text", x=12, y=pad + size // 2, font_size=11).text = "precision"
    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    for n, (label, (recall, precision)) in enumerate(curves.items()):
        color = palette[n % len(palette)]
        r = np.concatenate([[0.0], np.asarray(recall, dtype=float)])
        p = np.concatenate([[1.0], np.asarray(precision, dtype=float)])
        pts = " ".join(f"{pad + a * size:.2f},{pad + (1 - b) * size:.2f}" for a, b in zip(r, p))
        _el(root, "polyline", points=pts, fill="none", stroke=color, stroke_width=1.5)
        _el(root, "text", x=pad + size - 60, y=pad + 14 + 12 * n, font_size=10, fill=color).text = label
    return _to_string(root)
