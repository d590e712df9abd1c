"""Joint-attention admissibility plans for localized removal.

The token sequence is laid out as text spans (one global caption span plus
one span per instance label) followed by a ``rows x cols`` grid of image
tokens in row-major order.  Text positions that belong to no span are
padding: they attend only to themselves and nothing attends to them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyBox, LayoutMismatch

Span = tuple  # (start, length)


@dataclass(frozen=True)
class BBoxNorm:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(isinstance(v, (int, float)) and 0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"box coordinates must lie in [0, 1]: {vals}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"box must satisfy x0 < x1 and y0 < y1: {vals}")

    @classmethod
    def from_pixels(cls, bbox: tuple, width: int, height: int) -> "BBoxNorm":
        """From an exclusive-max pixel box ``(x0, y0, x1, y1)``."""
        x0, y0, x1, y1 = bbox
        return cls(x0 / width, y0 / height, x1 / width, y1 / height)

    def shrink(self, fraction: float) -> "BBoxNorm":
        """Box scaled about its center by ``1 - fraction`` on each axis."""
        cx, cy = (self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2
        hw, hh = (self.x1 - self.x0) * (1 - fraction) / 2, (self.y1 - self.y0) * (1 - fraction) / 2
        return BBoxNorm(cx - hw, cy - hh, cx + hw, cy + hh)

    def to_json(self) -> list:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class TokenLayout:
    global_span: Span
    instance_spans: tuple
    image_grid: tuple  # (rows, cols)
    image_offset: int

    def __post_init__(self):
        object.__setattr__(self, "global_span", tuple(int(v) for v in self.global_span))
        object.__setattr__(self, "instance_spans", tuple(tuple(int(v) for v in s) for s in self.instance_spans))
        object.__setattr__(self, "image_grid", tuple(int(v) for v in self.image_grid))
        rows, cols = self.image_grid
        if rows <= 0 or cols <= 0:
            raise LayoutMismatch(f"image grid must be positive, got {self.image_grid}")
        if self.image_offset < 0:
            raise LayoutMismatch("image_offset must be non-negative")
        spans = sorted([self.global_span, *self.instance_spans])
        for start, length in spans:
            if start < 0 or length <= 0 or start + length > self.image_offset:
                raise LayoutMismatch(f"span {(start, length)} outside text region [0, {self.image_offset})")
        for (s0, l0), (s1, _) in zip(spans, spans[1:]):
            if s0 + l0 > s1:
                raise LayoutMismatch("text spans overlap")

    @property
    def n_image(self) -> int:
        return self.image_grid[0] * self.image_grid[1]

    @property
    def n_tokens(self) -> int:
        return self.image_offset + self.n_image

    @classmethod
    def sequential(cls, global_len: int, instance_lens: Sequence[int], image_grid: tuple) -> "TokenLayout":
        """Spans packed back to back with the image grid right after the text."""
        pos = global_len
        spans = []
        for n in instance_lens:
            spans.append((pos, n))
            pos += n
        return cls((0, global_len), tuple(spans), tuple(image_grid), pos)

    def to_json(self) -> dict:
        return {
            "global_span": list(self.global_span),
            "instance_spans": [list(s) for s in self.instance_spans],
            "image_grid": list(self.image_grid),
            "image_offset": self.image_offset,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TokenLayout":
        return cls(tuple(d["global_span"]), tuple(tuple(s) for s in d["instance_spans"]),
                   tuple(d["image_grid"]), int(d["image_offset"]))


@dataclass(frozen=True, eq=False)
class AttentionPlan:
    layout: TokenLayout
    allowed: np.ndarray  # (n, n) bool; [q, k] = query q may attend key k

    def __post_init__(self):
        a = np.asarray(self.allowed, dtype=bool)
        n = self.layout.n_tokens
        if a.shape != (n, n):
            raise LayoutMismatch(f"plan is {a.shape}, layout needs {(n, n)}")
        if a.flags.writeable:
            a = a.copy()
            a.flags.writeable = False
        object.__setattr__(self, "allowed", a)

    @property
    def n_tokens(self) -> int:
        return self.layout.n_tokens

    def __eq__(self, other):
        if not isinstance(other, AttentionPlan):
            return NotImplemented
        return self.layout == other.layout and bool(np.array_equal(self.allowed, other.allowed))

    __hash__ = None

    def to_json(self) -> dict:
        """Layout header plus run-length rows; each row starts with a False run."""
        rows = []
        for row in self.allowed:
            change = np.flatnonzero(np.diff(row.astype(np.int8))) + 1
            bounds = np.concatenate([[0], change, [row.size]])
            runs = np.diff(bounds).tolist()
            if row[0]:
                runs = [0] + runs
            rows.append(runs)
        return {"n_tokens": self.n_tokens, "layout": self.layout.to_json(), "rows": rows}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, d: dict) -> "AttentionPlan":
        layout = TokenLayout.from_json(d["layout"])
        n = int(d["n_tokens"])
        if n != layout.n_tokens or len(d["rows"]) != n:
            raise LayoutMismatch("plan header disagrees with its rows")
        allowed = np.zeros((n, n), bool)
        for q, runs in enumerate(d["rows"]):
            if sum(runs) != n:
                raise LayoutMismatch(f"row {q} runs sum to {sum(runs)}, expected {n}")
            pos, val = 0, False
            for r in runs:
                allowed[q, pos:pos + r] = val
                pos += r
                val = not val
        return cls(layout, allowed)

    @classmethod
    def loads(cls, text: str) -> "AttentionPlan":
        return cls.from_json(json.loads(text))


def image_tokens_in_box(grid: tuple, box: BBoxNorm) -> set[int]:
    """Row-major indices of grid cells whose centers fall in the half-open box."""
    rows, cols = grid
    if rows <= 0 or cols <= 0:
        raise ValueError("grid dimensions must be positive")
    cy = (np.arange(rows) + 0.5) / rows
    cx = (np.arange(cols) + 0.5) / cols
    r = np.flatnonzero((cy >= box.y0) & (cy < box.y1))
    c = np.flatnonzero((cx >= box.x0) & (cx < box.x1))
    return {int(i) * cols + int(j) for i in r for j in c}


def _box_cells(grid: tuple, box: BBoxNorm) -> np.ndarray:
    rows, cols = grid
    cy = (np.arange(rows) + 0.5) / rows
    cx = (np.arange(cols) + 0.5) / cols
    inside = ((cy >= box.y0) & (cy < box.y1))[:, None] & ((cx >= box.x0) & (cx < box.x1))[None, :]
    return inside.ravel()


def build_joint_mask(layout: TokenLayout, boxes: Sequence[BBoxNorm], allow_instance_to_global: bool = False) -> AttentionPlan:
    """Admissibility matrix for global, per-instance and image tokens.

    Global queries see every text span and every image token.  Instance ``i``
    sees its own span and the image tokens inside box ``i`` (plus the global
    span when ``allow_instance_to_global``).  Image tokens see all image
    tokens, the global span, and the span of every box that covers them.
    """
    if len(boxes) != len(layout.instance_spans):
        raise LayoutMismatch(f"{len(boxes)} boxes for {len(layout.instance_spans)} instance spans")
    n = layout.n_tokens
    off = layout.image_offset
    img = slice(off, n)
    allowed = np.zeros((n, n), bool)
    gs, gl = layout.global_span
    g = slice(gs, gs + gl)
    text = np.zeros(n, bool)
    text[g] = True
    for s, l in layout.instance_spans:
        text[s:s + l] = True
    cells = []
    for i, box in enumerate(boxes):
        inside = _box_cells(layout.image_grid, box)
        if not inside.any():
            raise EmptyBox(f"box {i} {box.to_json()} covers no image token")
        cells.append(inside)
    # (a) global prompt reaches all text and all image tokens
    allowed[g, :] = text
    allowed[g, img] = True
    # (b) instance labels: own span plus in-box image tokens
    for (s, l), inside in zip(layout.instance_spans, cells):
        span = slice(s, s + l)
        allowed[span, span] = True
        allowed[span, img] = inside
        if allow_instance_to_global:
            allowed[span, g] = True
    # (c) image tokens: all image, global, and each covering instance span
    allowed[img, img] = True
    allowed[img, g] = True
    for (s, l), inside in zip(layout.instance_spans, cells):
        rows = off + np.flatnonzero(inside)
        allowed[rows, s:s + l] = True
    # (d) self-attention
    np.fill_diagonal(allowed, True)
    return AttentionPlan(layout, allowed)
