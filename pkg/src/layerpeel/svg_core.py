"""Flat-color SVG documents as ordered lists of filled cubic paths.

Parsing simplifies the input grammar: groups are flattened, transforms are
baked into coordinates, primitives become cubic paths and strokes are
outlined into fills.  Everything downstream only ever sees ``SvgDoc``.
"""
from __future__ import annotations

import math
import re
import xml.etree.ElementTree as etree
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from PIL import ImageColor

from .errors import MalformedXml, UnsupportedFeature

DEFAULT_TOLERANCE = 0.25
KAPPA = 4.0 * (math.sqrt(2.0) - 1.0) / 3.0  # quarter-circle cubic handle length

Point = tuple[float, float]
Viewbox = tuple[float, float, float, float]


@dataclass(frozen=True)
class ColorRGBA:
    r: int
    g: int
    b: int
    a: int = 255

    def __post_init__(self):
        for name in ("r", "g", "b", "a"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= v <= 255:
                raise ValueError(f"channel {name}={v!r} outside [0, 255]")

    @property
    def hex(self) -> str:
        return f"#{self.r:02x}{self.g:02x}{self.b:02x}"

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (int(self.r), int(self.g), int(self.b), int(self.a))

    @classmethod
    def parse(cls, text: str) -> "ColorRGBA":
        return parse_color(text)


WHITE = ColorRGBA(255, 255, 255, 255)
BLACK = ColorRGBA(0, 0, 0, 255)
TRANSPARENT = ColorRGBA(0, 0, 0, 0)


def parse_color(text: str) -> ColorRGBA:
    """Resolve hex, ``rgb()`` and CSS named colors; anything else is unsupported."""
    s = text.strip()
    try:
        rgb = ImageColor.getrgb(s)
    except ValueError:
        raise UnsupportedFeature(f"unresolvable paint {text!r}") from None
    if len(rgb) == 4 and rgb[3] != 255:
        raise UnsupportedFeature(f"semi-transparent paint {text!r}")
    return ColorRGBA(int(rgb[0]), int(rgb[1]), int(rgb[2]), 255)


# ----------------------------------------------------------------------------
# Geometry containers
# ----------------------------------------------------------------------------


def _freeze(segments) -> np.ndarray:
    arr = np.array(segments, dtype=np.float64).reshape(-1, 4, 2)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PathShape:
    """A filled region: closed cubic subpaths plus a flat color and fill rule.

    Each subpath is an ``(n, 4, 2)`` array of cubic segments; segment ``k``
    ends where ``k + 1`` starts and the last one ends at the first point.
    """

    id: str
    fill: ColorRGBA
    fill_rule: str = "nonzero"
    subpaths: tuple = ()

    def __post_init__(self):
        if self.fill_rule not in ("nonzero", "evenodd"):
            raise ValueError(f"unknown fill rule {self.fill_rule!r}")
        if not self.id:
            raise ValueError("path id must be non-empty")
        subs = tuple(_freeze(s) for s in self.subpaths)
        if not subs:
            raise ValueError(f"path {self.id!r} has no subpaths")
        for s in subs:
            if len(s) == 0:
                raise ValueError(f"path {self.id!r} has an empty subpath")
            if not np.all(np.isfinite(s)):
                raise ValueError(f"path {self.id!r} has non-finite coordinates")
            if not np.array_equal(s[0, 0], s[-1, 3]):
                raise ValueError(f"path {self.id!r} has an unclosed subpath")
        object.__setattr__(self, "subpaths", subs)

    def __eq__(self, other):
        if not isinstance(other, PathShape):
            return NotImplemented
        return (
            self.id == other.id
            and self.fill == other.fill
            and self.fill_rule == other.fill_rule
            and len(self.subpaths) == len(other.subpaths)
            and all(np.array_equal(a, b) for a, b in zip(self.subpaths, other.subpaths))
        )

    __hash__ = None

    def bounds(self) -> tuple[float, float, float, float]:
        pts = np.concatenate([s.reshape(-1, 2) for s in self.subpaths])
        (x0, y0), (x1, y1) = pts.min(axis=0), pts.max(axis=0)
        return float(x0), float(y0), float(x1), float(y1)

    def map_points(self, fn) -> "PathShape":
        """Return a copy with every control point passed through ``fn`` (an (n,2)->(n,2) map)."""
        subs = [fn(s.reshape(-1, 2)).reshape(-1, 4, 2) for s in self.subpaths]
        return PathShape(self.id, self.fill, self.fill_rule, tuple(subs))

    def with_id(self, new_id: str) -> "PathShape":
        return PathShape(new_id, self.fill, self.fill_rule, self.subpaths)


@dataclass(frozen=True)
class SvgDoc:
    """Paths in paint order: index 0 is painted first (bottom)."""

    viewbox: Viewbox
    paths: tuple = ()

    def __post_init__(self):
        vb = tuple(float(v) for v in self.viewbox)
        if len(vb) != 4 or not vb[2] > 0 or not vb[3] > 0:
            raise ValueError(f"invalid viewbox {self.viewbox!r}")
        paths = tuple(self.paths)
        ids = [p.id for p in paths]
        if len(set(ids)) != len(ids):
            raise ValueError("path ids must be unique")
        object.__setattr__(self, "viewbox", vb)
        object.__setattr__(self, "paths", paths)

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def path_ids(self) -> list[str]:
        return [p.id for p in self.paths]

    def get(self, path_id: str) -> PathShape:
        for p in self.paths:
            if p.id == path_id:
                return p
        raise KeyError(path_id)

    def without(self, ids: Iterable[str]) -> "SvgDoc":
        drop = set(ids)
        return SvgDoc(self.viewbox, tuple(p for p in self.paths if p.id not in drop))

    def only(self, ids: Iterable[str]) -> "SvgDoc":
        keep = set(ids)
        return SvgDoc(self.viewbox, tuple(p for p in self.paths if p.id in keep))


# ----------------------------------------------------------------------------
# Segment builders
# ----------------------------------------------------------------------------


def line_segment(p0: Point, p1: Point) -> np.ndarray:
    a, b = np.asarray(p0, float), np.asarray(p1, float)
    return np.array([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b])


def polygon_subpath(points: Sequence[Point]) -> np.ndarray:
    """Closed subpath of straight cubic segments through ``points``."""
    pts = [tuple(map(float, p)) for p in points]
    segs = [line_segment(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]
    out = np.array(segs)
    out[-1, 3] = out[0, 0]
    return out


def ellipse_subpath(cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    """Four cubic quarter arcs, starting at angle 0 and sweeping towards +y."""
    kx, ky = KAPPA * rx, KAPPA * ry
    p = [
        (cx + rx, cy), (cx + rx, cy + ky), (cx + kx, cy + ry), (cx, cy + ry),
        (cx - kx, cy + ry), (cx - rx, cy + ky), (cx - rx, cy),
        (cx - rx, cy - ky), (cx - kx, cy - ry), (cx, cy - ry),
        (cx + kx, cy - ry), (cx + rx, cy - ky), (cx + rx, cy),
    ]
    return np.array([p[0:4], p[3:7], p[6:10], p[9:13]], dtype=float)


def _close(segments: list) -> np.ndarray:
    arr = np.array(segments, dtype=float).reshape(-1, 4, 2)
    if not np.array_equal(arr[0, 0], arr[-1, 3]):
        arr = np.concatenate([arr, line_segment(arr[-1, 3], arr[0, 0])[None]])
    return arr


# ----------------------------------------------------------------------------
# Flattening
# ----------------------------------------------------------------------------


def _segment_counts(segs: np.ndarray, tolerance: float) -> np.ndarray:
    p0, p1, p2, p3 = segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3]
    dd = np.maximum(
        np.hypot(*(p0 - 2 * p1 + p2).T),
        np.hypot(*(p1 - 2 * p2 + p3).T),
    )
    # Wang's bound for a cubic: chord error <= 3*2/8 * dd / n^2
    n = np.ceil(np.sqrt(0.75 * dd / tolerance)).astype(np.int64)
    n = np.maximum(n, 1)
    # a segment whose handles hug the chord is already flat (convex hull bound)
    chord = p3 - p0
    clen = np.hypot(*chord.T)
    flat = np.maximum(_point_segment_dist(p1, p0, p3, chord, clen),
                      _point_segment_dist(p2, p0, p3, chord, clen)) <= tolerance
    n[flat] = 1
    return n


def _point_segment_dist(p, a, b, ab, ablen):
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ablen > 0, np.einsum("ij,ij->i", p - a, ab) / np.maximum(ablen, 1e-300) ** 2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(p - proj).T)


def flatten_subpath(segs: np.ndarray, tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
    """Closed polyline (without the repeated first vertex) for one subpath."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    n = _segment_counts(segs, tolerance)
    idx = np.repeat(np.arange(len(segs)), n)
    starts = np.cumsum(n) - n
    t = (np.arange(idx.size) - starts[idx]) / n[idx]
    s = segs[idx]
    mt = 1.0 - t
    b0, b1, b2, b3 = mt ** 3, 3 * mt * mt * t, 3 * mt * t * t, t ** 3
    pts = b0[:, None] * s[:, 0] + b1[:, None] * s[:, 1] + b2[:, None] * s[:, 2] + b3[:, None] * s[:, 3]
    # t == 0 reproduces the segment start exactly
    pts[starts] = segs[:, 0]
    return pts


def flatten_path(path: PathShape, tolerance: float = DEFAULT_TOLERANCE) -> list[np.ndarray]:
    return [flatten_subpath(s, tolerance) for s in path.subpaths]


# ----------------------------------------------------------------------------
# Affine transforms: (a, b, c, d, e, f) as in SVG's matrix()
# ----------------------------------------------------------------------------

IDENTITY = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


def compose(m1, m2):
    """m1 then m2 applied to the result, i.e. matrix product m2 @ m1."""
    a1, b1, c1, d1, e1, f1 = m1
    a2, b2, c2, d2, e2, f2 = m2
    return (
        a2 * a1 + c2 * b1,
        b2 * a1 + d2 * b1,
        a2 * c1 + c2 * d1,
        b2 * c1 + d2 * d1,
        a2 * e1 + c2 * f1 + e2,
        b2 * e1 + d2 * f1 + f2,
    )


def apply_matrix(m, pts: np.ndarray) -> np.ndarray:
    a, b, c, d, e, f = m
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([a * x + c * y + e, b * x + d * y + f], axis=-1)


_TRANSFORM_RE = re.compile(r"(matrix|translate|scale|rotate|skewX|skewY)\s*\(([^)]*)\)")
_NUM_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def parse_transform(text: str | None):
    m = IDENTITY
    if not text:
        return m
    consumed = 0
    for match in _TRANSFORM_RE.finditer(text):
        if text[consumed:match.start()].strip(" ,\t\n\r"):
            raise MalformedXml(f"bad transform {text!r}")
        consumed = match.end()
        name = match.group(1)
        args = [float(v) for v in _NUM_RE.findall(match.group(2))]
        if name == "matrix" and len(args) == 6:
            t = tuple(args)
        elif name == "translate" and len(args) in (1, 2):
            t = (1, 0, 0, 1, args[0], args[1] if len(args) == 2 else 0.0)
        elif name == "scale" and len(args) in (1, 2):
            t = (args[0], 0, 0, args[1] if len(args) == 2 else args[0], 0, 0)
        elif name == "rotate" and len(args) in (1, 3):
            r = math.radians(args[0])
            cs, sn = math.cos(r), math.sin(r)
            t = (cs, sn, -sn, cs, 0, 0)
            if len(args) == 3:
                cx, cy = args[1], args[2]
                t = compose(compose((1, 0, 0, 1, -cx, -cy), t), (1, 0, 0, 1, cx, cy))
        elif name == "skewX" and len(args) == 1:
            t = (1, 0, math.tan(math.radians(args[0])), 1, 0, 0)
        elif name == "skewY" and len(args) == 1:
            t = (1, math.tan(math.radians(args[0])), 0, 1, 0, 0)
        else:
            raise MalformedXml(f"bad transform {text!r}")
        # rightmost transform applies first
        m = compose(t, m)
    if text[consumed:].strip(" ,\t\n\r"):
        raise MalformedXml(f"bad transform {text!r}")
    return m


def _max_scale(m) -> float:
    a, b, c, d, _, _ = m
    return float(np.linalg.svd(np.array([[a, c], [b, d]]), compute_uv=False)[0]) or 1.0


# ----------------------------------------------------------------------------
# Path data
# ----------------------------------------------------------------------------


class _Scanner:
    def __init__(self, text: str):
        self.s = text
        self.i = 0

    def skip(self):
        while self.i < len(self.s) and self.s[self.i] in " \t\r\n,":
            self.i += 1

    def at_number(self) -> bool:
        self.skip()
        return self.i < len(self.s) and (self.s[self.i].isdigit() or self.s[self.i] in "+-.")

    def number(self) -> float:
        self.skip()
        m = _NUM_RE.match(self.s, self.i)
        if not m:
            raise MalformedXml(f"expected number in path data at {self.i}: {self.s[self.i:self.i + 20]!r}")
        self.i = m.end()
        return float(m.group(0))

    def flag(self) -> bool:
        self.skip()
        if self.i < len(self.s) and self.s[self.i] in "01":
            self.i += 1
            return self.s[self.i - 1] == "1"
        raise MalformedXml("expected arc flag in path data")

    def command(self) -> str | None:
        self.skip()
        if self.i >= len(self.s):
            return None
        c = self.s[self.i]
        if c in "MmLlHhVvCcSsQqTtAaZz":
            self.i += 1
            return c
        raise MalformedXml(f"unexpected character {c!r} in path data")


def arc_to_cubics(p1: Point, rx: float, ry: float, phi_deg: float, large: bool, sweep: bool, p2: Point) -> list:
    """Endpoint-parameterized elliptical arc as cubic segments."""
    x1, y1 = p1
    x2, y2 = p2
    if (x1, y1) == (x2, y2):
        return []
    rx, ry = abs(rx), abs(ry)
    if rx == 0 or ry == 0:
        return [line_segment(p1, p2)]
    phi = math.radians(phi_deg % 360.0)
    cphi, sphi = math.cos(phi), math.sin(phi)
    dx, dy = (x1 - x2) / 2.0, (y1 - y2) / 2.0
    x1p = cphi * dx + sphi * dy
    y1p = -sphi * dx + cphi * dy
    lam = (x1p / rx) ** 2 + (y1p / ry) ** 2
    if lam > 1:
        s = math.sqrt(lam)
        rx, ry = rx * s, ry * s
    num = rx * rx * ry * ry - rx * rx * y1p * y1p - ry * ry * x1p * x1p
    den = rx * rx * y1p * y1p + ry * ry * x1p * x1p
    coef = math.sqrt(max(0.0, num / den)) if den else 0.0
    if large == sweep:
        coef = -coef
    cxp, cyp = coef * rx * y1p / ry, -coef * ry * x1p / rx
    cx = cphi * cxp - sphi * cyp + (x1 + x2) / 2.0
    cy = sphi * cxp + cphi * cyp + (y1 + y2) / 2.0

    def angle(ux, uy, vx, vy):
        a = math.atan2(ux * vy - uy * vx, ux * vx + uy * vy)
        return a

    th1 = angle(1, 0, (x1p - cxp) / rx, (y1p - cyp) / ry)
    dth = angle((x1p - cxp) / rx, (y1p - cyp) / ry, (-x1p - cxp) / rx, (-y1p - cyp) / ry)
    if not sweep and dth > 0:
        dth -= 2 * math.pi
    elif sweep and dth < 0:
        dth += 2 * math.pi
    n = max(1, math.ceil(abs(dth) / (math.pi / 2) - 1e-9))
    delta = dth / n
    k = 4.0 / 3.0 * math.tan(delta / 4.0)
    segs = []

    def ell(t):
        ct, st = math.cos(t), math.sin(t)
        return (cx + rx * ct * cphi - ry * st * sphi, cy + rx * ct * sphi + ry * st * cphi)

    def deriv(t):
        ct, st = math.cos(t), math.sin(t)
        return (-rx * st * cphi - ry * ct * sphi, -rx * st * sphi + ry * ct * cphi)

    t = th1
    start = (x1, y1)
    for i in range(n):
        t2 = t + delta
        end = (x2, y2) if i == n - 1 else ell(t2)
        d1, d2 = deriv(t), deriv(t2)
        c1 = (start[0] + k * d1[0], start[1] + k * d1[1])
        c2 = (end[0] - k * d2[0], end[1] - k * d2[1])
        segs.append(np.array([start, c1, c2, end], dtype=float))
        start, t = end, t2
    return segs


def parse_path_data(d: str) -> list[tuple[list, bool]]:
    """Parse an SVG ``d`` attribute into ``(segments, closed)`` subpaths (absolute cubics)."""
    sc = _Scanner(d or "")
    subpaths: list[tuple[list, bool]] = []
    segs: list = []
    cur = (0.0, 0.0)
    start = (0.0, 0.0)
    last_c2 = None  # reflected control for S
    last_q = None  # reflected control for T
    cmd = None

    def flush(closed):
        nonlocal segs
        if segs:
            subpaths.append((segs, closed))
        segs = []

    while True:
        if sc.at_number() and cmd is not None:
            c = cmd
        else:
            c = sc.command()
            if c is None:
                break
        rel = c.islower()
        C = c.upper()
        ox, oy = cur if rel else (0.0, 0.0)
        prev_c2, prev_q = last_c2, last_q
        last_c2 = last_q = None
        if C == "M":
            flush(False)
            x, y = sc.number() + ox, sc.number() + oy
            cur = start = (x, y)
            cmd = "l" if rel else "L"
            continue
        if C == "Z":
            if segs and cur != start:
                segs.append(line_segment(cur, start))
            flush(True)
            cur = start
            cmd = None
            continue
        if C == "L":
            p = (sc.number() + ox, sc.number() + oy)
            segs.append(line_segment(cur, p))
            cur = p
        elif C == "H":
            p = (sc.number() + ox, cur[1])
            segs.append(line_segment(cur, p))
            cur = p
        elif C == "V":
            p = (cur[0], sc.number() + oy)
            segs.append(line_segment(cur, p))
            cur = p
        elif C == "C":
            c1 = (sc.number() + ox, sc.number() + oy)
            c2 = (sc.number() + ox, sc.number() + oy)
            p = (sc.number() + ox, sc.number() + oy)
            segs.append(np.array([cur, c1, c2, p], dtype=float))
            last_c2, cur = c2, p
        elif C == "S":
            c1 = cur if prev_c2 is None else (2 * cur[0] - prev_c2[0], 2 * cur[1] - prev_c2[1])
            c2 = (sc.number() + ox, sc.number() + oy)
            p = (sc.number() + ox, sc.number() + oy)
            segs.append(np.array([cur, c1, c2, p], dtype=float))
            last_c2, cur = c2, p
        elif C in "QT":
            if C == "Q":
                q = (sc.number() + ox, sc.number() + oy)
            else:
                q = cur if prev_q is None else (2 * cur[0] - prev_q[0], 2 * cur[1] - prev_q[1])
            p = (sc.number() + ox, sc.number() + oy)
            c1 = (cur[0] + 2.0 / 3.0 * (q[0] - cur[0]), cur[1] + 2.0 / 3.0 * (q[1] - cur[1]))
            c2 = (p[0] + 2.0 / 3.0 * (q[0] - p[0]), p[1] + 2.0 / 3.0 * (q[1] - p[1]))
            segs.append(np.array([cur, c1, c2, p], dtype=float))
            last_q, cur = q, p
        elif C == "A":
            rx, ry, phi = sc.number(), sc.number(), sc.number()
            large, sweep = sc.flag(), sc.flag()
            p = (sc.number() + ox, sc.number() + oy)
            segs.extend(arc_to_cubics(cur, rx, ry, phi, large, sweep, p))
            cur = p
        cmd = c
    flush(False)
    return subpaths


# ----------------------------------------------------------------------------
# Stroke outlining
# ----------------------------------------------------------------------------


def _positive(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    area = np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
    return poly if area >= 0 else poly[::-1]


def outline_stroke(subpaths: list[tuple[np.ndarray, bool]], width: float, tolerance: float) -> list[np.ndarray]:
    """Round-joined, round-capped stroke as a union of equally oriented pieces.

    Under the nonzero rule the pieces union exactly, so no polygon boolean
    operations are needed.
    """
    r = width / 2.0
    pieces: list[np.ndarray] = []
    for segs, closed in subpaths:
        pts = flatten_subpath(segs, tolerance) if len(segs) else np.zeros((0, 2))
        pts = np.concatenate([pts, segs[-1:, 3]]) if not closed else np.concatenate([pts, pts[:1]])
        keep = np.ones(len(pts), bool)
        keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
        pts = pts[keep]
        for p in (pts[:-1] if closed and len(pts) > 1 else pts):
            pieces.append(ellipse_subpath(p[0], p[1], r, r))
        for a, b in zip(pts[:-1], pts[1:]):
            d = b - a
            n = np.array([-d[1], d[0]]) / np.hypot(*d) * r
            quad = _positive(np.array([a + n, b + n, b - n, a - n]))
            pieces.append(polygon_subpath(quad))
    return pieces


# ----------------------------------------------------------------------------
# Document parsing
# ----------------------------------------------------------------------------

_INHERITED = ("fill", "fill-rule", "stroke", "stroke-width", "visibility")
_UNSUPPORTED_ELEMENTS = {"text", "image", "use", "foreignObject", "style", "switch", "video", "audio"}
_SKIPPED_ELEMENTS = {
    "defs", "title", "desc", "metadata", "linearGradient", "radialGradient", "pattern",
    "filter", "mask", "clipPath", "marker", "symbol", "script",
}
_SVG_NS = "http://www.w3.org/2000/svg"


def _local(tag: str) -> tuple[str | None, str]:
    if tag.startswith("{"):
        ns, name = tag[1:].split("}", 1)
        return ns, name
    return None, tag


def _length(value: str | None, default: float = 0.0) -> float:
    if value is None:
        return default
    m = _NUM_RE.match(value.strip())
    if not m:
        raise MalformedXml(f"bad length {value!r}")
    rest = value.strip()[m.end():].strip()
    if rest not in ("", "px"):
        raise UnsupportedFeature(f"unit {rest!r} in length {value!r}")
    return float(m.group(0))


def _style_of(el) -> dict[str, str]:
    style = {k: v for k, v in el.attrib.items() if not k.startswith("{")}
    if "style" in style:
        for decl in style.pop("style").split(";"):
            if ":" in decl:
                k, v = decl.split(":", 1)
                style[k.strip()] = v.strip()
    return style


def _check_opacity(style: dict[str, str], key: str):
    if key in style:
        try:
            v = float(style[key].rstrip("%")) / (100.0 if style[key].endswith("%") else 1.0)
        except ValueError:
            raise MalformedXml(f"bad {key} {style[key]!r}") from None
        if v < 1.0:
            raise UnsupportedFeature(f"{key}={style[key]} (semi-transparency)")


def _paint(value: str | None) -> ColorRGBA | None:
    if value is None:
        return None
    v = value.strip()
    if v == "none":
        return None
    if v.startswith("url("):
        raise UnsupportedFeature(f"paint server {v!r} (gradients/patterns)")
    return parse_color(v)


def _viewbox(root) -> Viewbox:
    vb = root.attrib.get("viewBox")
    if vb:
        nums = [float(v) for v in _NUM_RE.findall(vb)]
        if len(nums) != 4:
            raise MalformedXml(f"bad viewBox {vb!r}")
        if nums[2] <= 0 or nums[3] <= 0:
            raise UnsupportedFeature(f"degenerate viewBox {vb!r}")
        return tuple(nums)
    w = _length(root.attrib.get("width"), 300.0)
    h = _length(root.attrib.get("height"), 150.0)
    if w <= 0 or h <= 0:
        raise UnsupportedFeature("degenerate canvas size")
    return (0.0, 0.0, w, h)


def _element_geometry(name: str, a: dict[str, str]) -> list[tuple[list, bool]] | None:
    """Local-space subpaths of a shape element, or None if it draws nothing."""
    if name == "path":
        return parse_path_data(a.get("d", ""))
    if name == "rect":
        x, y = _length(a.get("x")), _length(a.get("y"))
        w, h = _length(a.get("width")), _length(a.get("height"))
        if w <= 0 or h <= 0:
            return None
        rx, ry = a.get("rx"), a.get("ry")
        rx_v = _length(rx) if rx is not None else None
        ry_v = _length(ry) if ry is not None else None
        if rx_v is None:
            rx_v = ry_v or 0.0
        if ry_v is None:
            ry_v = rx_v
        rx_v, ry_v = min(max(rx_v, 0.0), w / 2), min(max(ry_v, 0.0), h / 2)
        if rx_v == 0 or ry_v == 0:
            return [(list(polygon_subpath([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])), True)]
        d = (
            f"M{x + rx_v},{y} H{x + w - rx_v} A{rx_v},{ry_v} 0 0 1 {x + w},{y + ry_v} "
            f"V{y + h - ry_v} A{rx_v},{ry_v} 0 0 1 {x + w - rx_v},{y + h} H{x + rx_v} "
            f"A{rx_v},{ry_v} 0 0 1 {x},{y + h - ry_v} V{y + ry_v} A{rx_v},{ry_v} 0 0 1 {x + rx_v},{y} Z"
        )
        return parse_path_data(d)
    if name in ("circle", "ellipse"):
        cx, cy = _length(a.get("cx")), _length(a.get("cy"))
        if name == "circle":
            rx = ry = _length(a.get("r"))
        else:
            rx, ry = _length(a.get("rx")), _length(a.get("ry"))
        if rx <= 0 or ry <= 0:
            return None
        return [(list(ellipse_subpath(cx, cy, rx, ry)), True)]
    if name == "line":
        p1 = (_length(a.get("x1")), _length(a.get("y1")))
        p2 = (_length(a.get("x2")), _length(a.get("y2")))
        return [([line_segment(p1, p2)], False)]
    if name in ("polygon", "polyline"):
        nums = [float(v) for v in _NUM_RE.findall(a.get("points", ""))]
        pts = list(zip(nums[0::2], nums[1::2]))
        if len(pts) < 2:
            return None
        segs = [line_segment(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
        closed = name == "polygon"
        if closed and pts[0] != pts[-1]:
            segs.append(line_segment(pts[-1], pts[0]))
        return [(segs, closed)]
    return None


@dataclass
class _ParseState:
    paths: list = field(default_factory=list)
    used_ids: set = field(default_factory=set)
    counter: int = 0
    tolerance: float = DEFAULT_TOLERANCE
    root: object = None

    def new_id(self, wanted: str | None) -> str:
        self.counter += 1
        base = wanted or f"p{self.counter}"
        pid, k = base, 1
        while pid in self.used_ids:
            k += 1
            pid = f"{base}-{k}"
        self.used_ids.add(pid)
        return pid


def _walk(el, inherited: dict[str, str], ctm, st: _ParseState):
    ns, name = _local(el.tag)
    if ns not in (None, _SVG_NS):
        return
    if name in _UNSUPPORTED_ELEMENTS:
        raise UnsupportedFeature(f"<{name}> element")
    if name in _SKIPPED_ELEMENTS:
        return
    style = _style_of(el)
    for key in ("filter", "mask", "clip-path"):
        if key in style and style[key].strip() != "none":
            raise UnsupportedFeature(f"{key} attribute")
    for key in ("opacity", "fill-opacity", "stroke-opacity"):
        _check_opacity(style, key)
    if style.get("display", "").strip() == "none":
        return
    attrs = dict(inherited)
    attrs.update({k: style[k] for k in _INHERITED if k in style})
    ctm = compose(parse_transform(el.attrib.get("transform")), ctm)

    if name in ("svg", "g", "a"):
        if name == "svg" and el is not st.root:
            raise UnsupportedFeature("nested <svg> element")
        for child in el:
            _walk(child, attrs, ctm, st)
        return

    geom = _element_geometry(name, el.attrib)
    if geom is None or attrs.get("visibility", "visible") in ("hidden", "collapse"):
        return
    geom = [(np.array(s, dtype=float).reshape(-1, 4, 2), c) for s, c in geom if len(s)]
    if not geom:
        return
    # a <line> encloses no area, so only its stroke can paint
    fill = None if name == "line" else _paint(attrs.get("fill", "black"))
    stroke = _paint(attrs.get("stroke"))
    rule = attrs.get("fill-rule", "nonzero").strip()
    if rule not in ("nonzero", "evenodd"):
        raise MalformedXml(f"bad fill-rule {rule!r}")
    wanted = el.attrib.get("id")

    def bake(subs):
        return tuple(apply_matrix(ctm, s) for s in subs)

    if fill is not None:
        subs = [_close(list(s)) for s, _ in geom]
        st.paths.append(PathShape(st.new_id(wanted), fill, rule, bake(subs)))
    if stroke is not None:
        width = _length(attrs.get("stroke-width"), 1.0)
        if width > 0:
            pieces = outline_stroke(geom, width, st.tolerance / _max_scale(ctm))
            if pieces:
                sid = st.new_id(f"{wanted}-stroke" if wanted else None)
                st.paths.append(PathShape(sid, stroke, "nonzero", bake(pieces)))


def parse_svg(text: str, tolerance: float = DEFAULT_TOLERANCE) -> SvgDoc:
    """Parse and simplify an SVG document into an ``SvgDoc``."""
    try:
        root = etree.fromstring(text.encode("utf-8") if isinstance(text, str) else text)
    except etree.ParseError as e:
        raise MalformedXml(str(e)) from None
    if _local(root.tag)[1] != "svg":
        raise MalformedXml("root element is not <svg>")
    st = _ParseState(tolerance=tolerance, root=root)
    _walk(root, {}, IDENTITY, st)
    return SvgDoc(_viewbox(root), tuple(st.paths))


def load_svg(path) -> SvgDoc:
    with open(path, "rb") as f:
        return parse_svg(f.read())


# ----------------------------------------------------------------------------
# Normalization, filtering, emission
# ----------------------------------------------------------------------------


def fit_transform(viewbox: Viewbox, target: float) -> tuple[float, float, float]:
    """Uniform scale and centering offsets mapping ``viewbox`` onto a target square."""
    mx, my, w, h = viewbox
    s = target / max(w, h)
    return s, (target - w * s) / 2.0 - mx * s, (target - h * s) / 2.0 - my * s


def normalize_viewbox(doc: SvgDoc, target: int = 512) -> SvgDoc:
    if target <= 0:
        raise ValueError("target must be positive")
    if doc.viewbox == (0.0, 0.0, float(target), float(target)):
        return doc
    s, ox, oy = fit_transform(doc.viewbox, target)
    paths = tuple(p.map_points(lambda q: q * s + np.array([ox, oy])) for p in doc.paths)
    return SvgDoc((0.0, 0.0, float(target), float(target)), paths)


def filter_by_path_count(doc: SvgDoc, max_paths: int = 30) -> bool:
    """True when the document is kept (at most ``max_paths`` paths)."""
    return len(doc.paths) <= max_paths


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def path_data(path: PathShape) -> str:
    parts = []
    for sub in path.subpaths:
        parts.append(f"M{_fmt(sub[0, 0, 0])} {_fmt(sub[0, 0, 1])}")
        for seg in sub:
            parts.append("C" + " ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in seg[1:]))
        parts.append("Z")
    return "".join(parts)


def path_element(path: PathShape) -> str:
    return (
        f'<path id="{path.id}" fill="{path.fill.hex}" fill-rule="{path.fill_rule}" '
        f'd="{path_data(path)}"/>'
    )


def to_svg(doc: SvgDoc) -> str:
    """Canonical emission: only ``<path>`` elements with absolute cubics."""
    vb = " ".join(_fmt(v) for v in doc.viewbox)
    body = "\n".join("  " + path_element(p) for p in doc.paths)
    return f'<svg xmlns="{_SVG_NS}" viewBox="{vb}">\n{body}\n</svg>\n'
