"""Parsers for VLM replies: XML-ish tagged sections and box lists."""
from __future__ import annotations

import json
import re
from typing import Iterable

from ..attention import BBoxNorm
from ..errors import BoxOutOfRange, GraphError, InvalidGraphJson, InvalidJson, MissingTag
from ..layer_graph import LayerGraph, parse_graph, strip_json_comments

TAGS = (
    "image_description",
    "layer_graph_reasoning",
    "layer_graph",
    "non_occluded_analysis",
    "caption",
    "thinking",
    "description",
)

_FENCE_RE = re.compile(r"^\s*```[A-Za-z0-9_-]*[ \t]*\n?|\n?```\s*$")


def strip_fences(text: str) -> str:
    """Remove a leading and/or trailing Markdown code fence (either may be missing)."""
    return _FENCE_RE.sub("", text)


def _innermost(text: str, tag: str) -> str | None:
    close = text.find(f"</{tag}>")
    if close < 0:
        return None
    start = text.rfind(f"<{tag}>", 0, close)
    if start < 0:
        return None
    return text[start + len(tag) + 2:close]


def parse_tagged_response(text: str, required: Iterable[str] = ()) -> dict[str, str]:
    """Content of each known tag present in ``text``, whitespace-trimmed.

    The ``layer_graph`` entry comes back with fences and ``//`` comments
    removed and is checked to decode as a graph.  Only :class:`MissingTag` and
    :class:`InvalidGraphJson` are ever raised.
    """
    if not isinstance(text, str):
        raise MissingTag("response is not text")
    out = {}
    for tag in TAGS:
        body = _innermost(text, tag)
        if body is not None:
            out[tag] = body.strip()
    missing = [t for t in required if t not in out]
    if missing:
        raise MissingTag(f"response lacks {', '.join(missing)}")
    if "layer_graph" in out:
        cleaned = strip_json_comments(strip_fences(out["layer_graph"])).strip()
        try:
            parse_graph(cleaned)
        except (GraphError, ValueError, TypeError) as e:
            raise InvalidGraphJson(f"layer_graph block does not decode: {e}") from None
        out["layer_graph"] = cleaned
    return out


def graph_from_tags(tags: dict[str, str]) -> LayerGraph:
    if "layer_graph" not in tags:
        raise MissingTag("response lacks layer_graph")
    try:
        return parse_graph(tags["layer_graph"])
    except GraphError as e:
        raise InvalidGraphJson(str(e)) from None


def _int_coord(v) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise BoxOutOfRange(f"box coordinate {v!r} is not an integer")
    return int(v)


def box2d_to_bbox(box_2d) -> BBoxNorm:
    """``[y0, x0, y1, x1]`` on a 0-1000 frame to a normalized box."""
    if not isinstance(box_2d, (list, tuple)) or len(box_2d) != 4:
        raise BoxOutOfRange(f"box_2d must hold 4 numbers, got {box_2d!r}")
    y0, x0, y1, x1 = (_int_coord(v) for v in box_2d)
    if not all(0 <= v <= 1000 for v in (y0, x0, y1, x1)):
        raise BoxOutOfRange(f"box_2d {box_2d} leaves the 0-1000 frame")
    if not (y0 < y1 and x0 < x1):
        raise BoxOutOfRange(f"box_2d {box_2d} is empty or inverted")
    return BBoxNorm(x0 / 1000, y0 / 1000, x1 / 1000, y1 / 1000)


def bbox_to_box2d(box: BBoxNorm) -> list[int]:
    return [round(box.y0 * 1000), round(box.x0 * 1000), round(box.y1 * 1000), round(box.x1 * 1000)]


def parse_box_response(text: str) -> list[tuple[BBoxNorm, str]]:
    """Entries of a ``[{"box_2d": [...], "label": ...}, ...]`` reply; ``mask`` fields are ignored."""
    if not isinstance(text, str):
        raise InvalidJson("box response is not text")
    try:
        data = json.loads(strip_fences(text.strip()))
    except (json.JSONDecodeError, RecursionError) as e:
        raise InvalidJson(f"box response is not JSON: {e}") from None
    if not isinstance(data, list):
        raise InvalidJson("box response must be a JSON list")
    out = []
    for entry in data:
        if not isinstance(entry, dict) or "box_2d" not in entry or "label" not in entry:
            raise InvalidJson(f"entry lacks box_2d/label: {entry!r}")
        label = entry["label"]
        if not isinstance(label, str) or not label.strip():
            raise InvalidJson(f"label must be non-empty text: {label!r}")
        out.append((box2d_to_bbox(entry["box_2d"]), label.strip()))
    return out
