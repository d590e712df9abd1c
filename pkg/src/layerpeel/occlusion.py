"""Ground-truth occlusion from vector geometry.

A path is non-occluded (topmost) when no path painted above it shares a
pixel with it.  Coverage is decided on hard-edged masks at the normalized
resolution: a pixel is covered iff its center is inside the path.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, EmptyDocument
from .svg_core import PathShape, SvgDoc, Viewbox, fit_transform, flatten_path


@dataclass(frozen=True, eq=False)
class BitMask:
    bits: np.ndarray  # (height, width) bool, row-major

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] == 0 or b.shape[1] == 0:
            raise ValueError(f"mask must be 2-D and non-empty, got shape {b.shape}")
        if b.flags.writeable:
            b = b.copy()
            b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @classmethod
    def empty(cls, width: int, height: int) -> "BitMask":
        return cls(np.zeros((height, width), bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def any(self) -> bool:
        return bool(self.bits.any())

    def _check(self, other: "BitMask"):
        if self.bits.shape != other.bits.shape:
            raise DimensionMismatch(f"{self.bits.shape} vs {other.bits.shape}")

    def __and__(self, other: "BitMask") -> "BitMask":
        self._check(other)
        return BitMask(self.bits & other.bits)

    def __or__(self, other: "BitMask") -> "BitMask":
        self._check(other)
        return BitMask(self.bits | other.bits)

    def __sub__(self, other: "BitMask") -> "BitMask":
        self._check(other)
        return BitMask(self.bits & ~other.bits)

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None

    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight pixel bounds ``(x0, y0, x1, y1)`` with exclusive max, or None when empty."""
        cached = self.__dict__.get("_bbox", False)
        if cached is not False:
            return cached
        rows = np.flatnonzero(self.bits.any(axis=1))
        if rows.size == 0:
            box = None
        else:
            cols = np.flatnonzero(self.bits.any(axis=0))
            box = int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1
        object.__setattr__(self, "_bbox", box)  # bits are read-only, so this never goes stale
        return box

    def window(self) -> tuple:
        """Slices of the bounding box (empty slices for an empty mask)."""
        b = self.bbox()
        if b is None:
            return slice(0, 0), slice(0, 0)
        return slice(b[1], b[3]), slice(b[0], b[2])

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.bits).convert("1").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png(cls, data: bytes) -> "BitMask":
        im = Image.open(io.BytesIO(data))
        return cls(np.asarray(im.convert("1"), dtype=bool))


@dataclass(frozen=True)
class TopmostSet:
    path_ids: tuple  # ids in paint order
    panel_mask: BitMask

    @property
    def ids(self) -> frozenset:
        return frozenset(self.path_ids)

    def __len__(self) -> int:
        return len(self.path_ids)


def fill_polygons(polygons: Sequence[np.ndarray], width: int, height: int, rule: str = "nonzero") -> np.ndarray:
    """Scanline fill of closed polygons given in pixel coordinates.

    Pixel ``(r, c)`` is set iff its center ``(c + .5, r + .5)`` is inside under
    ``rule``.  Edges are half-open in y, and a crossing only counts for centers
    strictly to its right, so shared edges never double-cover a center.
    """
    out = np.zeros((height, width), bool)
    polys = [np.asarray(p, float) for p in polygons if len(p) >= 3]
    if not polys:
        return out
    a = np.concatenate(polys)
    b = np.concatenate([np.roll(p, -1, axis=0) for p in polys])
    x0, y0, x1, y1 = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    if x0.size == 0:
        return out
    wind = np.where(y1 > y0, 1, -1)
    ylo, yhi = np.minimum(y0, y1), np.maximum(y0, y1)
    # rows whose center satisfies ylo <= r + .5 < yhi
    r0 = np.clip(np.ceil(ylo - 0.5), 0, height).astype(np.int64)
    r1 = np.clip(np.ceil(yhi - 0.5), 0, height).astype(np.int64)
    n = np.maximum(r1 - r0, 0)
    total = int(n.sum())
    if total == 0:
        return out
    e = np.repeat(np.arange(n.size), n)
    rows = r0[e] + (np.arange(total) - np.repeat(np.cumsum(n) - n, n))
    yc = rows + 0.5
    xc = x0[e] + (yc - y0[e]) * (x1[e] - x0[e]) / (y1[e] - y0[e])
    # first pixel whose center lies strictly right of the crossing
    col = np.floor(xc - 0.5).astype(np.int64) + 1
    col = np.clip(col, 0, width)
    rmin, rmax = int(rows.min()), int(rows.max()) + 1
    cmin, cmax = int(col.min()), int(col.max())
    if cmax <= cmin:
        return out
    w = cmax - cmin + 1
    flat = (rows - rmin) * w + (col - cmin)
    delta = np.bincount(flat, weights=wind[e], minlength=(rmax - rmin) * w).reshape(rmax - rmin, w)
    winding = np.cumsum(delta[:, :-1], axis=1).astype(np.int64)
    if rule == "evenodd":
        inside = (winding & 1).astype(bool)
    elif rule == "nonzero":
        inside = winding != 0
    else:
        raise ValueError(f"unknown fill rule {rule!r}")
    out[rmin:rmax, cmin:cmax] = inside
    return out


def pixel_polygons(path: PathShape, resolution: int, viewbox: Viewbox, tolerance: float | None = None):
    """Flattened subpaths of ``path`` mapped into pixel coordinates."""
    s, ox, oy = fit_transform(viewbox, resolution)
    tol = tolerance if tolerance is not None else 0.25 / s
    off = np.array([ox, oy])
    return [p * s + off for p in flatten_path(path, tol)]


def coverage_mask(
    path: PathShape,
    resolution: int = 512,
    viewbox: Viewbox = (0.0, 0.0, 512.0, 512.0),
    tolerance: float | None = None,
) -> BitMask:
    """Hard-edged coverage of ``path`` on a ``resolution``-square pixel grid.

    The default flattening tolerance is a quarter pixel.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    polys = pixel_polygons(path, resolution, viewbox, tolerance)
    return BitMask(fill_polygons(polys, resolution, resolution, path.fill_rule))


def overlaps(a: PathShape, b: PathShape, resolution: int = 512, viewbox: Viewbox = (0.0, 0.0, 512.0, 512.0)) -> bool:
    ma = coverage_mask(a, resolution, viewbox).bits
    mb = coverage_mask(b, resolution, viewbox).bits
    return bool(np.any(ma & mb))


def doc_masks(doc: SvgDoc, resolution: int = 512) -> list[BitMask]:
    return [coverage_mask(p, resolution, doc.viewbox) for p in doc.paths]


def topmost_from_masks(doc: SvgDoc, masks: Sequence[BitMask]) -> TopmostSet:
    if not doc.paths:
        raise EmptyDocument("document has no paths")
    h, w = masks[0].bits.shape
    above = np.zeros((h, w), bool)
    union = np.zeros((h, w), bool)
    top = []
    # walk from the top down carrying the union of everything painted above
    for path, m in zip(reversed(doc.paths), reversed(masks)):
        if not np.any(m.bits & above):
            top.append(path.id)
            union |= m.bits
        above |= m.bits
    return TopmostSet(tuple(reversed(top)), BitMask(union))


def topmost_set(doc: SvgDoc, resolution: int = 512) -> TopmostSet:
    """Paths that no higher path overlaps by at least one pixel."""
    if not doc.paths:
        raise EmptyDocument("document has no paths")
    return topmost_from_masks(doc, doc_masks(doc, resolution))


def peel_generations(doc: SvgDoc, resolution: int = 512) -> list[tuple]:
    """Iterated topmost strata, top first, until the document is empty."""
    masks = dict(zip(doc.path_ids, doc_masks(doc, resolution)))
    out = []
    while doc.paths:
        top = topmost_from_masks(doc, [masks[i] for i in doc.path_ids])
        out.append(top.path_ids)
        doc = doc.without(top.path_ids)
    return out
