"""Deterministic grayscale rasterizer for symbolic panels.

Shapes are regular polygons (type 0..3: triangle, square, pentagon, hexagon)
or a circle (type 4), filled by even-odd scanline at the color's intensity
and outlined in black. No anti-aliasing and no randomness: identical
assignments always produce identical bytes.
"""

from __future__ import annotations

import math

import numpy as np

from .types import Assignment, Attribute, Layout

WHITE = 255
OUTLINE = 0

_POLY_SIDES = {0: 3, 1: 4, 2: 5, 3: 6}


def shape_radius(size: int, half_width: float) -> float:
    """Circumradius of a shape of the given size inside a region.

    Size 5 spans 70% of the region width. The floor keeps the smallest
    shape at least ~2.4px in half-width-8 regions; below that, shapes lose
    their interior pixels and color becomes unreadable.
    """
    return (0.30 + 0.40 * size / 5.0) * half_width


def fill_intensity(color: int) -> int:
    """Fill value on the 8-bit scale; color 0 is pure white (outline only)."""
    return 255 * (10 - color) // 10


def regions(layout: Layout, px: int) -> list[tuple[float, float, float]]:
    """(cx, cy, half_width) per component, in pixel coordinates."""
    h = px / 2.0
    q = px / 4.0
    if layout is Layout.CENTER:
        return [(h, h, h)]
    if layout is Layout.LEFT_RIGHT:
        return [(q, h, q), (3 * q, h, q)]
    if layout is Layout.UP_DOWN:
        return [(h, q, q), (h, 3 * q, q)]
    # OUT_IN_CENTER: big outline first, small filled shape on top
    return [(h, h, h), (h, h, q)]


def _polygon_vertices(sides: int, cx: float, cy: float, r: float) -> list[tuple[float, float]]:
    # vertex at the top for every polygon; an axis-aligned square would
    # rasterize identically to the circle at the smallest size
    start = -math.pi / 2.0
    return [(cx + r * math.cos(start + 2.0 * math.pi * k / sides),
             cy + r * math.sin(start + 2.0 * math.pi * k / sides))
            for k in range(sides)]


def _fill_polygon(img: np.ndarray, verts: list[tuple[float, float]], value: int) -> None:
    px = img.shape[0]
    n = len(verts)
    for row in range(px):
        yc = row + 0.5
        xs = []
        for k in range(n):
            x1, y1 = verts[k]
            x2, y2 = verts[(k + 1) % n]
            if y1 == y2:
                continue
            if min(y1, y2) <= yc < max(y1, y2):
                xs.append(x1 + (yc - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        for a, b in zip(xs[::2], xs[1::2]):
            lo = max(0, math.ceil(a - 0.5))
            hi = min(px - 1, math.floor(b - 0.5))
            if lo <= hi:
                img[row, lo:hi + 1] = value


def _draw_line(img: np.ndarray, x1: float, y1: float, x2: float, y2: float,
               value: int) -> None:
    px = img.shape[0]
    steps = max(1, int(math.ceil(max(abs(x2 - x1), abs(y2 - y1)) * 2)))
    for k in range(steps + 1):
        t = k / steps
        x = int(round(x1 + t * (x2 - x1) - 0.5))
        y = int(round(y1 + t * (y2 - y1) - 0.5))
        if 0 <= x < px and 0 <= y < px:
            img[y, x] = value


def _draw_polygon(img: np.ndarray, verts: list[tuple[float, float]],
                  fill: int | None) -> None:
    if fill is not None:
        _fill_polygon(img, verts, fill)
    for k in range(len(verts)):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % len(verts)]
        _draw_line(img, x1, y1, x2, y2, OUTLINE)


def _draw_circle(img: np.ndarray, cx: float, cy: float, r: float,
                 fill: int | None) -> None:
    px = img.shape[0]
    yy, xx = np.mgrid[0:px, 0:px]
    dist = np.sqrt((xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2)
    if fill is not None:
        img[dist <= r] = fill
    img[(dist <= r) & (dist > r - 1.2)] = OUTLINE


def _draw_shape(img: np.ndarray, shape_type: int, cx: float, cy: float,
                r: float, fill: int | None) -> None:
    if shape_type == 4:
        _draw_circle(img, cx, cy, r, fill)
    else:
        _draw_polygon(img, _polygon_vertices(_POLY_SIDES[shape_type], cx, cy, r), fill)


def render_panel(assignment: Assignment, layout: Layout, px: int) -> np.ndarray:
    """One panel as a px*px uint8 image, white background.

    The outer component of OUT_IN_CENTER is an unfilled outline drawn last,
    so a large inner shape can never hide it.
    """
    img = np.full((px, px), WHITE, dtype=np.uint8)
    order = list(enumerate(zip(assignment, regions(layout, px))))
    if layout is Layout.OUT_IN_CENTER:
        order = order[::-1]
    for comp, (obj, region) in order:
        cx, cy, half = region
        r = shape_radius(obj[Attribute.SIZE], half)
        outline_only = layout is Layout.OUT_IN_CENTER and comp == 0
        fill = None if outline_only else fill_intensity(obj[Attribute.COLOR])
        _draw_shape(img, obj[Attribute.TYPE], cx, cy, r, fill)
    return img


def render_problem(panels: list[Assignment], candidates: list[Assignment],
                   layout: Layout, px: int) -> np.ndarray:
    """All 16 images of a problem: 8 context panels then the 8 candidates."""
    out = np.empty((16, px, px), dtype=np.uint8)
    for i in range(8):
        out[i] = render_panel(panels[i], layout, px)
    for i in range(8):
        out[8 + i] = render_panel(candidates[i], layout, px)
    return out
