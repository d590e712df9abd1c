"""Seeded random flat-color documents for tests, demos and acceptance runs.

Shapes sit on an integer grid so that canonical emission (three decimals) is
lossless.  Fill colors are drawn so every pair, and every color versus white,
differs by more than ``min_contrast`` in some channel; that keeps diff masks
exact when one path is peeled off another.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .svg_core import ColorRGBA, PathShape, SvgDoc, ellipse_subpath, polygon_subpath

KINDS = ("rect", "circle", "triangle")


def contrasting_colors(rng: np.random.Generator, n: int, min_contrast: int = 20) -> list[ColorRGBA]:
    out: list[np.ndarray] = []
    white = np.array([255, 255, 255])
    while len(out) < n:
        c = rng.integers(0, 256, size=3)
        if np.abs(c - white).max() <= min_contrast:
            continue
        if any(np.abs(c - o).max() <= min_contrast for o in out):
            continue
        out.append(c)
    return [ColorRGBA(int(c[0]), int(c[1]), int(c[2])) for c in out]


def random_shape(rng: np.random.Generator, kind: str, path_id: str, fill: ColorRGBA, size: int = 512) -> PathShape:
    lo, hi = size // 32, size // 2
    if kind == "rect":
        w, h = rng.integers(lo, hi, size=2)
        x, y = rng.integers(0, size - w), rng.integers(0, size - h)
        sub = polygon_subpath([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])
    elif kind == "circle":
        r = int(rng.integers(lo // 2, hi // 2))
        cx, cy = rng.integers(r, size - r, size=2)
        sub = ellipse_subpath(float(cx), float(cy), float(r), float(r))
    elif kind == "triangle":
        while True:
            cx, cy = rng.integers(lo, size - lo, size=2)
            pts = np.clip(np.array([cx, cy]) + rng.integers(-hi // 2, hi // 2, size=(3, 2)), 0, size)
            a = (pts[1] - pts[0])
            b = (pts[2] - pts[0])
            if abs(int(a[0]) * int(b[1]) - int(a[1]) * int(b[0])) >= 2 * lo * lo:
                break
        sub = polygon_subpath([tuple(map(float, p)) for p in pts])
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return PathShape(path_id, fill, "nonzero", (sub,))


def random_doc(
    seed: int | Sequence[int],
    min_paths: int = 3,
    max_paths: int = 15,
    size: int = 512,
    kinds: Sequence[str] = KINDS,
    min_contrast: int = 20,
) -> SvgDoc:
    """A document of random rects, circles and triangles in random z-order."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_paths, max_paths + 1))
    colors = contrasting_colors(rng, n, min_contrast)
    paths = [random_shape(rng, str(rng.choice(list(kinds))), f"p{k}", colors[k], size) for k in range(n)]
    return SvgDoc((0.0, 0.0, float(size), float(size)), tuple(paths))


def nested_squares(n: int, size: int = 512, colors: Sequence[ColorRGBA] | None = None) -> SvgDoc:
    """``n`` concentric squares, largest at the bottom; each peel removes exactly one."""
    if colors is None:
        colors = contrasting_colors(np.random.default_rng(n), n)
    step = size / (2 * n + 2)
    paths = []
    for k in range(n):
        a, b = step * (k + 1), size - step * (k + 1)
        paths.append(PathShape(f"s{k}", colors[k], "nonzero", (polygon_subpath([(a, a), (b, a), (b, b), (a, b)]),)))
    return SvgDoc((0.0, 0.0, float(size), float(size)), tuple(paths))
