"""Trace flat-color raster regions back into vector paths.

Components are 4-connected runs of one exact color (8-connected background),
and each boundary is walked along pixel edges, so an evenodd re-render of the
traced rings reproduces the input mask exactly.  Simplification and curve
fitting are optional lossy passes on top.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .errors import DegeneratePolygon
from .raster import RasterImage
from .svg_core import ColorRGBA, PathShape, SvgDoc, _fmt, path_element, polygon_subpath

# direction codes in image coordinates (y down): +x, +y, -x, -y
_STEP = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True, eq=False)
class TracedRegion:
    color: ColorRGBA
    outer: np.ndarray  # (n, 2) ring in pixel-corner coordinates
    holes: tuple = ()
    first_pixel: int = 0  # raster index of the component's first pixel

    @property
    def rings(self) -> list[np.ndarray]:
        return [self.outer, *self.holes]


@dataclass(frozen=True)
class VectorLayer:
    iteration_index: int
    shapes: tuple = ()


def _ring_area2(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _canonical_start(ring: np.ndarray) -> np.ndarray:
    k = int(np.lexsort((ring[:, 0], ring[:, 1]))[0])
    return np.roll(ring, -k, axis=0)


def _trace_loops(m: np.ndarray) -> list[np.ndarray]:
    """Boundary loops of a padded boolean mask, interior on the right-hand side.

    At a saddle vertex the walk turns right, which keeps diagonal foreground
    pixels apart (4-connected foreground, 8-connected background).
    """
    up = m[1:-1, 1:-1] & ~m[:-2, 1:-1]
    down = m[1:-1, 1:-1] & ~m[2:, 1:-1]
    left = m[1:-1, 1:-1] & ~m[1:-1, :-2]
    right = m[1:-1, 1:-1] & ~m[1:-1, 2:]
    starts = []
    # pixel (r, c) of the unpadded view has corners (c, r)..(c+1, r+1)
    r, c = np.nonzero(up)
    starts.append((c, r, np.zeros_like(r)))
    r, c = np.nonzero(right)
    starts.append((c + 1, r, np.ones_like(r)))
    r, c = np.nonzero(down)
    starts.append((c + 1, r + 1, np.full_like(r, 2)))
    r, c = np.nonzero(left)
    starts.append((c, r + 1, np.full_like(r, 3)))
    xs = np.concatenate([s[0] for s in starts]).astype(np.int64)
    ys = np.concatenate([s[1] for s in starts]).astype(np.int64)
    ds = np.concatenate([s[2] for s in starts]).astype(np.int64)
    stride = m.shape[1] + 1
    key = (ys * stride + xs) * 4 + ds
    order = np.argsort(key)
    skey = key[order]
    step = np.array(_STEP)
    end = (ys + step[ds, 1]) * stride + (xs + step[ds, 0])
    # successor: prefer a right turn (splits saddles), then straight, then left
    nxt = np.full(len(xs), -1, np.int64)
    for turn in (3, 0, 1):
        want = end * 4 + (ds + turn) % 4
        pos = np.clip(np.searchsorted(skey, want), 0, len(skey) - 1)
        hit = skey[pos] == want
        nxt[hit] = order[pos[hit]]
    nxt_l = nxt.tolist()
    used = bytearray(len(xs))
    loops = []
    # start each loop at its topmost-leftmost edge so output order is stable
    for k0 in np.lexsort((xs, ys)).tolist():
        if used[k0]:
            continue
        cyc = []
        k = k0
        while not used[k]:
            used[k] = 1
            cyc.append(k)
            k = nxt_l[k]
        idx = np.array(cyc)
        d = ds[idx]
        corner = d != np.roll(d, 1)
        if not corner.any():
            corner[:] = True
        loops.append(np.stack([xs[idx][corner], ys[idx][corner]], axis=1))
    return loops


def _quantize(rgb: np.ndarray, opaque: np.ndarray) -> np.ndarray:
    """Snap colors to the modal color of their 3-bit-per-channel bucket."""
    keys = rgb.astype(np.int64)
    full = (keys[..., 0] << 16) | (keys[..., 1] << 8) | keys[..., 2]
    bucket = ((keys[..., 0] >> 5) << 6) | ((keys[..., 1] >> 5) << 3) | (keys[..., 2] >> 5)
    out = full.copy()
    b, f = bucket[opaque], full[opaque]
    for bk in np.unique(b):
        vals, counts = np.unique(f[b == bk], return_counts=True)
        out[opaque & (bucket == bk)] = vals[np.argmax(counts)]
    return out


def trace_regions(region: RasterImage, quantize: bool = False) -> list[TracedRegion]:
    """Flat-color components of a transparent-background image, in scanline order."""
    full = region.pixels
    alpha = full[..., 3] >= 128
    rows = np.flatnonzero(alpha.any(axis=1))
    if rows.size == 0:
        return []
    cols = np.flatnonzero(alpha.any(axis=0))
    # work inside the tight bounds of the opaque pixels
    oy, ox = int(rows[0]), int(cols[0])
    px = full[oy:rows[-1] + 1, ox:cols[-1] + 1]
    opaque = alpha[oy:rows[-1] + 1, ox:cols[-1] + 1]
    if quantize:
        key = _quantize(px[..., :3], opaque)
    else:
        rgb = px[..., :3].astype(np.int64)
        key = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    key = np.where(opaque, key, -1)
    width = full.shape[1]
    regions = []
    for value in np.unique(key[opaque]).tolist():
        color = ColorRGBA((value >> 16) & 255, (value >> 8) & 255, value & 255, 255)
        labels, n = ndimage.label(key == value)
        for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
            comp = labels[sl] == lab
            y0, x0 = sl[0].start + oy, sl[1].start + ox
            first = np.flatnonzero(comp.ravel())[0]
            fr, fc = divmod(int(first), comp.shape[1])
            padded = np.pad(comp, 1)
            loops = _trace_loops(padded)
            offset = np.array([x0, y0])
            outer, holes = None, []
            for loop in loops:
                ring = _canonical_start(loop + offset)
                if _ring_area2(ring) > 0 and outer is None:
                    outer = ring
                else:
                    holes.append(ring)
            holes.sort(key=lambda h: (int(h[0, 1]), int(h[0, 0])))
            regions.append(TracedRegion(color, outer, tuple(holes), (y0 + fr) * width + x0 + fc))
    regions.sort(key=lambda t: t.first_pixel)
    return regions


def _dp(points: np.ndarray, epsilon: float) -> list[int]:
    """Douglas-Peucker on an open polyline; returns kept indices (ends included)."""
    keep = [0, len(points) - 1]
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        a, b = points[i], points[j]
        seg = points[i + 1:j]
        ab = b - a
        L = math.hypot(*ab)
        if L == 0:
            d = np.hypot(*(seg - a).T)
        else:
            t = np.clip(((seg - a) @ ab) / (L * L), 0.0, 1.0)
            d = np.hypot(*(seg - (a + t[:, None] * ab)).T)
        k = int(np.argmax(d))
        if d[k] > epsilon:
            keep.append(i + 1 + k)
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return sorted(keep)


def _farthest_pair(ring: np.ndarray) -> tuple[int, int]:
    cand = np.arange(len(ring))
    if len(ring) > 64:
        try:
            cand = ConvexHull(ring).vertices
        except (QhullError, ValueError):
            pass
    pts = ring[cand].astype(float)
    d = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    i, j = np.unravel_index(int(np.argmax(d)), d.shape)
    i, j = int(cand[i]), int(cand[j])
    return (i, j) if i < j else (j, i)


def simplify(polygon: Sequence, epsilon: float = 1.0) -> np.ndarray:
    """Closed-ring Douglas-Peucker, split at the two farthest-apart vertices.

    Rings that would collapse below three vertices are returned unchanged.
    """
    ring = np.asarray(polygon, dtype=float)
    if ring.ndim != 2 or len(ring) < 3:
        raise DegeneratePolygon(f"need at least 3 vertices, got {len(ring)}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return ring
    i, j = _farthest_pair(ring)
    rolled = np.roll(ring, -i, axis=0)
    j -= i
    first = rolled[: j + 1]
    second = np.concatenate([rolled[j:], rolled[:1]])
    k1 = _dp(first, epsilon)
    k2 = _dp(second, epsilon)
    out = [first[k] for k in k1] + [second[k] for k in k2[1:-1]]
    if len(out) < 3:
        return ring
    return np.array(out)


def fit_beziers(ring: np.ndarray, corner_angle: float = 60.0, epsilon: float = 1.0) -> np.ndarray:
    """Least-squares cubic fit between corners of a closed ring.

    Corners are vertices whose turning angle exceeds ``corner_angle`` degrees.
    Returns an ``(n, 4, 2)`` closed subpath.  Display-quality only.
    """
    ring = np.asarray(ring, float)
    n = len(ring)
    if n < 3:
        raise DegeneratePolygon("need at least 3 vertices")
    prev, nxt = np.roll(ring, 1, axis=0), np.roll(ring, -1, axis=0)
    v1, v2 = ring - prev, nxt - ring
    ang = np.degrees(np.abs(np.arctan2(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0], (v1 * v2).sum(1))))
    corners = np.flatnonzero(ang > corner_angle).tolist()
    if len(corners) < 2:
        corners = sorted({0, n // 2, *corners})
    segs = []
    for a, b in zip(corners, corners[1:] + [corners[0] + n]):
        pts = np.array([ring[k % n] for k in range(a, b + 1)])
        segs.extend(_fit_span(pts, epsilon))
    out = np.array(segs)
    out[-1, 3] = out[0, 0]
    return out


def _fit_span(pts: np.ndarray, epsilon: float, depth: int = 0) -> list:
    p0, p3 = pts[0], pts[-1]
    if len(pts) <= 2:
        return [np.array([p0, p0 + (p3 - p0) / 3, p0 + 2 * (p3 - p0) / 3, p3])]
    t1 = pts[1] - p0
    t2 = pts[-2] - p3
    t1 /= max(np.hypot(*t1), 1e-12)
    t2 /= max(np.hypot(*t2), 1e-12)
    d = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    u = d / d[-1] if d[-1] > 0 else np.linspace(0, 1, len(pts))
    b0, b1, b2, b3 = (1 - u) ** 3, 3 * u * (1 - u) ** 2, 3 * u * u * (1 - u), u ** 3
    A = np.stack([b1[:, None] * t1, b2[:, None] * t2], axis=-1)  # (m, 2, 2)
    rhs = pts - (b0 + b1)[:, None] * p0 - (b2 + b3)[:, None] * p3
    M = np.concatenate([A[:, 0, :], A[:, 1, :]])  # x rows then y rows
    alpha, *_ = np.linalg.lstsq(M, np.concatenate([rhs[:, 0], rhs[:, 1]]), rcond=None)
    seg_len = d[-1]
    if not np.all(alpha > 1e-6 * seg_len):
        alpha = np.array([seg_len / 3, seg_len / 3])
    seg = np.array([p0, p0 + alpha[0] * t1, p3 + alpha[1] * t2, p3])
    curve = (b0[:, None] * seg[0] + b1[:, None] * seg[1] + b2[:, None] * seg[2] + b3[:, None] * seg[3])
    err = np.hypot(*(curve - pts).T)
    if err.max() > epsilon and len(pts) > 3 and depth < 12:
        k = int(np.argmax(err))
        k = min(max(k, 1), len(pts) - 2)
        return _fit_span(pts[: k + 1], epsilon, depth + 1) + _fit_span(pts[k:], epsilon, depth + 1)
    return [seg]


def euler_number(mask: np.ndarray) -> int:
    """Components (4-connected) minus holes (8-connected background not touching the border)."""
    mask = np.asarray(mask, bool)
    _, comps = ndimage.label(mask)
    padded = np.pad(~mask, 1, constant_values=True)
    _, bg = ndimage.label(padded, structure=np.ones((3, 3), bool))
    return comps - (bg - 1)


def region_to_shape(region: TracedRegion, path_id: str, epsilon: float = 0.0, curves: bool = False) -> PathShape:
    subs = []
    for ring in region.rings:
        r = simplify(ring, epsilon) if epsilon > 0 and len(ring) >= 3 else np.asarray(ring, float)
        subs.append(fit_beziers(r) if curves else polygon_subpath(r))
    return PathShape(path_id, region.color, "evenodd", tuple(subs))


def vectorize_region(region: RasterImage, iteration_index: int, epsilon: float = 1.0,
                     quantize: bool = False, curves: bool = False) -> VectorLayer:
    traced = trace_regions(region, quantize=quantize)
    shapes = tuple(
        region_to_shape(t, f"l{iteration_index}_{k}", epsilon, curves) for k, t in enumerate(traced)
    )
    return VectorLayer(iteration_index, shapes)


def emit_svg(layers: Sequence[VectorLayer], canvas: int) -> SvgDoc:
    """Stack peeled layers in reverse: the last layer peeled is painted first."""
    ordered = sorted(layers, key=lambda l: l.iteration_index)
    paths = [s for layer in reversed(ordered) for s in layer.shapes]
    return SvgDoc((0.0, 0.0, float(canvas), float(canvas)), tuple(paths))


def emit_svg_text(layers: Sequence[VectorLayer], canvas: int) -> str:
    """SVG text with one ``<g data-iteration-index>`` group per peel iteration."""
    ordered = sorted(layers, key=lambda l: l.iteration_index)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(canvas)} {_fmt(canvas)}">']
    for layer in reversed(ordered):
        out.append(f'  <g data-iteration-index="{layer.iteration_index}">')
        out.extend("    " + path_element(s) for s in layer.shapes)
        out.append("  </g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
