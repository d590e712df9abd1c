"""Deterministic geometric captions for flat-color paths.

Phrases look like ``"the red circle at top-left"``.  Color names come from the
CSS named-color table (nearest in RGB, alphabetical on ties), the shape class
from a few outline heuristics, and the position from a 3x3 grid over the
viewbox.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from PIL import ImageColor
from scipy.spatial import ConvexHull, QhullError

from .svg_core import ColorRGBA, PathShape, Viewbox, flatten_path

SHAPE_CLASSES = ("circle", "ellipse", "rectangle", "triangle", "polygon", "shape")
_POSITIONS = (
    ("top-left", "top", "top-right"),
    ("left", "center", "right"),
    ("bottom-left", "bottom", "bottom-right"),
)


@lru_cache(maxsize=1)
def _css_table() -> tuple[tuple[str, ...], np.ndarray]:
    names = sorted(ImageColor.colormap)
    rgb = np.array([ImageColor.getrgb(n)[:3] for n in names], dtype=np.int64)
    return tuple(names), rgb


def color_name(color: ColorRGBA) -> str:
    """Nearest CSS color name; alphabetically first among equidistant names."""
    names, rgb = _css_table()
    d = ((rgb - np.array([color.r, color.g, color.b])) ** 2).sum(axis=1)
    return names[int(np.argmin(d))]  # argmin keeps the first, names are sorted


def _is_straight(seg: np.ndarray) -> bool:
    p0, p1, p2, p3 = seg
    d = p3 - p0
    n = np.hypot(*d)
    if n == 0:
        return bool(np.allclose(seg, p0))
    tol = 2e-3 + 1e-6 * n  # absorbs the 3-decimal rounding of emitted control points
    off = lambda p: abs(d[0] * (p[1] - p0[1]) - d[1] * (p[0] - p0[0])) / n
    return off(p1) < tol and off(p2) < tol


def _corners(poly: np.ndarray) -> np.ndarray:
    """Drop vertices that lie on the line through their neighbours."""
    prev, nxt = np.roll(poly, 1, axis=0), np.roll(poly, -1, axis=0)
    v1, v2 = poly - prev, nxt - poly
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    scale = np.hypot(*v1.T) * np.hypot(*v2.T)
    return poly[np.abs(cross) > 1e-6 * np.maximum(scale, 1e-12)]


def _area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def shape_class(path: PathShape) -> str:
    """One of :data:`SHAPE_CLASSES` from outline heuristics."""
    if len(path.subpaths) != 1:
        return "shape"
    sub = path.subpaths[0]
    x0, y0, x1, y1 = path.bounds()
    size = max(x1 - x0, y1 - y0)
    if size <= 0:
        return "shape"
    if all(_is_straight(s) for s in sub):
        poly = _corners(sub[:, 0, :])
        k = len(poly)
        if k == 3:
            return "triangle"
        if k == 4:
            e = np.roll(poly, -1, axis=0) - poly
            dots = (e * np.roll(e, -1, axis=0)).sum(axis=1)
            lens = np.hypot(*e.T)
            if np.all(np.abs(dots) <= 1e-6 * lens * np.roll(lens, -1)):
                return "rectangle"
        return "polygon" if k >= 3 else "shape"
    poly = flatten_path(path, size / 512.0)[0]
    area = _area(poly)
    try:
        hull = ConvexHull(poly).volume
    except (QhullError, ValueError):
        return "shape"
    if hull <= 0 or area / hull < 0.98:
        return "shape"
    w, h = x1 - x0, y1 - y0
    ellipse_area = np.pi * w * h / 4.0
    if abs(area / ellipse_area - 1.0) > 0.03:
        return "shape"
    return "circle" if max(w, h) / min(w, h) <= 1.1 else "ellipse"


def position_word(path: PathShape, viewbox: Viewbox) -> str:
    x0, y0, x1, y1 = path.bounds()
    mx, my, w, h = viewbox
    cx, cy = ((x0 + x1) / 2 - mx) / w, ((y0 + y1) / 2 - my) / h
    col = min(max(int(cx * 3), 0), 2)
    row = min(max(int(cy * 3), 0), 2)
    return _POSITIONS[row][col]


def path_phrase(path: PathShape, viewbox: Viewbox) -> str:
    return f"the {color_name(path.fill)} {shape_class(path)} at {position_word(path, viewbox)}"


def _plural(word: str) -> str:
    return word + ("es" if word.endswith(("s", "x")) else "s")


def geometric_caption(paths: Sequence[PathShape], viewbox: Viewbox = (0.0, 0.0, 512.0, 512.0)) -> str:
    """Comma-separated phrases, grouping three or more paths of one color and class."""
    if not paths:
        raise ValueError("need at least one path to caption")
    keys = [(color_name(p.fill), shape_class(p)) for p in paths]
    counts: dict = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    phrases, grouped = [], set()
    for p, k in zip(paths, keys):
        if counts[k] >= 3:
            if k not in grouped:
                grouped.add(k)
                phrases.append(f"the {k[0]} {_plural(k[1])}")
        else:
            phrases.append(f"the {k[0]} {k[1]} at {position_word(p, viewbox)}")
    return ", ".join(phrases)
