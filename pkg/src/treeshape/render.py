"""SVG rendering of root trees, tree rows (geodesics, mode sweeps) and
dendrograms.

Branches are drawn as polylines; laterals sharing a correspondence index
across a figure share a palette color, and virtual laterals are omitted.
The y axis is flipped so that mathematically "downward" roots (decreasing
y) grow down the page.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import Dendrogram
from .tree_model import RootTree

PALETTE = (
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628",
    "#f781bf", "#17becf", "#bcbd22", "#8c564b", "#2ca02c", "#d62728",
)


@dataclass(frozen=True)
class RenderStyle:
    stroke_width: float = 2.0
    main_color: str = "#333333"
    lateral_palette: tuple[str, ...] = PALETTE
    panel_width: float = 240.0
    panel_height: float = 320.0
    margin: float = 20.0

    def __post_init__(self) -> None:
        if self.panel_width <= 0 or self.panel_height <= 0 or self.stroke_width <= 0:
            raise ValueError("style dimensions must be positive")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")


DEFAULT_STYLE = RenderStyle()


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _tree_bbox(tree: RootTree) -> tuple[float, float, float, float]:
    pts = [tree.main.points]
    pts.extend(br.points for _, br in tree.real_laterals)
    allpts = np.vstack(pts)
    return (
        float(allpts[:, 0].min()),
        float(allpts[:, 0].max()),
        float(allpts[:, 1].min()),
        float(allpts[:, 1].max()),
    )


def _union_bbox(trees: Sequence[RootTree]) -> tuple[float, float, float, float]:
    boxes = [_tree_bbox(t) for t in trees]
    return (
        min(b[0] for b in boxes),
        max(b[1] for b in boxes),
        min(b[2] for b in boxes),
        max(b[3] for b in boxes),
    )


class _PanelTransform:
    """Fit a data bbox into one panel, preserving aspect and flipping y."""

    def __init__(self, bbox, style: RenderStyle, x_offset: float = 0.0):
        x0, x1, y0, y1 = bbox
        spanx = max(x1 - x0, 1e-12)
        spany = max(y1 - y0, 1e-12)
        inner_w = style.panel_width - 2 * style.margin
        inner_h = style.panel_height - 2 * style.margin
        self.scale = min(inner_w / spanx, inner_h / spany)
        self.x0, self.y1 = x0, y1
        self.ox = x_offset + style.margin + (inner_w - spanx * self.scale) / 2
        self.oy = style.margin + (inner_h - spany * self.scale) / 2

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        out = np.empty_like(pts)
        out[:, 0] = self.ox + (pts[:, 0] - self.x0) * self.scale
        out[:, 1] = self.oy + (self.y1 - pts[:, 1]) * self.scale
        return out


def _polyline(pts: np.ndarray, color: str, width: float) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
    return (
        f'<polyline points="{coords}" fill="none" stroke="{color}" '
        f'stroke-width="{_fmt(width)}" stroke-linecap="round" '
        f'stroke-linejoin="round"/>'
    )


def _svg_document(width: float, height: float, body: list[str]) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _panel_elements(
    tree: RootTree,
    transform: _PanelTransform,
    style: RenderStyle,
    labels: Sequence[int] | None,
) -> list[str]:
    elements = [_polyline(transform(tree.main.points), style.main_color, style.stroke_width)]
    palette = style.lateral_palette
    for k, (t, br) in enumerate(tree.laterals):
        if br.is_virtual:
            continue
        idx = labels[k] if labels is not None else k
        color = palette[idx % len(palette)]
        elements.append(_polyline(transform(br.points), color, style.stroke_width))
    return elements


def render_tree(
    tree: RootTree,
    style: RenderStyle = DEFAULT_STYLE,
    labels: Sequence[int] | None = None,
) -> str:
    """One tree in one panel; ``labels`` override correspondence colors."""
    transform = _PanelTransform(_tree_bbox(tree), style)
    body = _panel_elements(tree, transform, style, labels)
    return _svg_document(style.panel_width, style.panel_height, body)


def render_tree_row(
    trees: Sequence[RootTree],
    style: RenderStyle = DEFAULT_STYLE,
    shared_scale: bool = True,
    titles: Sequence[str] | None = None,
) -> str:
    """Side-by-side panels with consistent lateral colors across panels.

    Used for geodesic strips and mode sweeps, where the k-th lateral of each
    tree corresponds to the k-th lateral of every other.
    """
    if not trees:
        raise ValueError("nothing to render")
    bbox = _union_bbox(trees) if shared_scale else None
    body = []
    for i, tree in enumerate(trees):
        x_off = i * style.panel_width
        tf = _PanelTransform(bbox or _tree_bbox(tree), style, x_offset=x_off)
        body.extend(_panel_elements(tree, tf, style, labels=None))
        if titles is not None:
            body.append(
                f'<text x="{_fmt(x_off + style.panel_width / 2)}" '
                f'y="{_fmt(style.panel_height - 4)}" text-anchor="middle" '
                f'font-size="10" font-family="sans-serif" fill="#666666">'
                f"{titles[i]}</text>"
            )
    return _svg_document(style.panel_width * len(trees), style.panel_height, body)


def _leaf_order(dend: Dendrogram) -> list[int]:
    """Left-to-right leaf order that keeps merge brackets from crossing."""
    m = dend.n_leaves
    children = {
        m + idx: (int(l), int(r)) for idx, (l, r, _, _) in enumerate(dend.merges)
    }
    order: list[int] = []
    stack = [2 * m - 2] if m > 1 else [0]
    while stack:
        node = stack.pop()
        if node < m:
            order.append(node)
        else:
            left, right = children[node]
            stack.append(right)
            stack.append(left)
    return order


def render_dendrogram(dend: Dendrogram, style: RenderStyle = DEFAULT_STYLE) -> str:
    """Classic dendrogram: leaves along x, merge heights up the y axis."""
    m = dend.n_leaves
    width = max(style.panel_width, 40.0 * m + 2 * style.margin)
    height = style.panel_height
    inner_h = height - 2 * style.margin - 14.0  # leave room for labels
    max_h = max(float(dend.heights().max()), 1e-12)

    def y_of(h: float) -> float:
        return style.margin + inner_h * (1.0 - h / max_h)

    # x position and current height per cluster id
    xs = {
        leaf: style.margin + (width - 2 * style.margin) * (slot + 0.5) / m
        for slot, leaf in enumerate(_leaf_order(dend))
    }
    hs = {i: 0.0 for i in range(m)}
    body = []
    for idx, (left, right, h, _) in enumerate(dend.merges):
        left, right = int(left), int(right)
        xl, xr = xs[left], xs[right]
        yl, yr, y = y_of(hs[left]), y_of(hs[right]), y_of(h)
        body.append(
            f'<path d="M {_fmt(xl)} {_fmt(yl)} V {_fmt(y)} H {_fmt(xr)} '
            f'V {_fmt(yr)}" fill="none" stroke="#555555" stroke-width="1.5"/>'
        )
        xs[m + idx] = (xl + xr) / 2
        hs[m + idx] = float(h)
    for i, label in enumerate(dend.leaf_labels):
        body.append(
            f'<text x="{_fmt(xs[i])}" y="{_fmt(height - style.margin + 10)}" '
            f'text-anchor="middle" font-size="9" font-family="sans-serif" '
            f'fill="#333333">{label}</text>'
        )
    return _svg_document(width, height, body)
