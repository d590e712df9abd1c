"""Training-triplet construction from a corpus of SVG files.

Every document is repeatedly stripped of its topmost stratum; each strip
yields an ``(edit prompt, source image, target image)`` triplet plus an
annotation panel showing the full image beside the removed elements.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .captions import geometric_caption
from .errors import EmptyDocument, LayerPeelError, MalformedXml, UnsupportedFeature
from .occlusion import BitMask, TopmostSet, doc_masks, topmost_from_masks
from .raster import RasterImage, paint_masks
from .svg_core import SvgDoc, filter_by_path_count, load_svg, normalize_viewbox

log = logging.getLogger(__name__)

PANEL_HALF = 512
CHECKER_CELL = 16
CHECKER_LIGHT = 230  # gray cell, the one at the origin
CHECKER_DARK = 255  # white cell
DIVIDER_X = (511, 512)
GLYPH_SCALE = 4
GLYPH_ORIGIN = (8, 8)  # (x, y) offset of each letter inside its half
MAX_PATHS = 30
PAPER_SPLITS = {"train": 113_700, "val": 1000, "test": 1000}

_GLYPHS = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
}

Captioner = Callable[[SvgDoc, TopmostSet, RasterImage], str]


@dataclass(frozen=True)
class TripletRecord:
    svg_id: str
    step_index: int
    edit_prompt: str
    src_image_path: str
    tar_image_path: str
    removed_path_ids: tuple
    panel_image_path: str
    changed_pixels: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["removed_path_ids"] = list(self.removed_path_ids)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TripletRecord":
        return cls(**{**d, "removed_path_ids": tuple(d["removed_path_ids"])})


@dataclass(frozen=True, eq=False)
class Triplet:
    """One peel step held in memory."""

    step_index: int
    edit_prompt: str
    src: RasterImage
    tar: RasterImage
    panel: RasterImage
    removed_path_ids: tuple
    changed_pixels: int


@dataclass
class CorpusManifest:
    accepted: list = field(default_factory=list)  # svg ids
    rejected: list = field(default_factory=list)  # {"file", "reason"}
    splits: dict = field(default_factory=lambda: {"train": [], "val": [], "test": []})
    triplet_counts: dict = field(default_factory=dict)

    @property
    def total_triplets(self) -> int:
        return sum(self.triplet_counts.values())

    def to_json(self) -> dict:
        reasons: dict = {}
        for r in self.rejected:
            key = r["reason"].split(":")[0]
            reasons[key] = reasons.get(key, 0) + 1
        return {
            "accepted_count": len(self.accepted),
            "rejected_count": len(self.rejected),
            "rejected_reasons": dict(sorted(reasons.items())),
            "accepted": list(self.accepted),
            "rejected": list(self.rejected),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "triplet_counts": dict(self.triplet_counts),
            "total_triplets": self.total_triplets,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CorpusManifest":
        return cls(list(d["accepted"]), list(d["rejected"]), {k: list(v) for k, v in d["splits"].items()},
                   dict(d["triplet_counts"]))


# ----------------------------------------------------------------------------
# Panel composition
# ----------------------------------------------------------------------------


def checkerboard(width: int, height: int, cell: int = CHECKER_CELL) -> np.ndarray:
    """RGBA checkerboard; the cell at the origin is the gray one."""
    yy, xx = np.mgrid[0:height, 0:width]
    light = ((yy // cell + xx // cell) % 2) == 0
    px = np.empty((height, width, 4), np.uint8)
    px[..., :3] = np.where(light, CHECKER_LIGHT, CHECKER_DARK)[..., None]
    px[..., 3] = 255
    return px


def glyph_mask(letter: str, scale: int = GLYPH_SCALE) -> np.ndarray:
    rows = _GLYPHS[letter]
    bits = np.array([[ch == "#" for ch in row] for row in rows], bool)
    return np.kron(bits, np.ones((scale, scale), bool)).astype(bool)


def _render_on(px: np.ndarray, doc: SvgDoc, masks: Sequence[BitMask]) -> None:
    for path, m in zip(doc.paths, masks):
        px[m.bits] = path.fill.as_tuple()


def compose_panel(full: SvgDoc, topmost: TopmostSet, masks: Optional[Sequence[BitMask]] = None,
                  half: int = PANEL_HALF) -> RasterImage:
    """Side-by-side annotation panel: ``A`` = whole image, ``B`` = topmost paths only."""
    if masks is None:
        masks = doc_masks(full, half)
    left = checkerboard(half, half)
    _render_on(left, full, masks)
    right = checkerboard(half, half)
    keep = topmost.ids
    _render_on(right, full.only(keep), [m for p, m in zip(full.paths, masks) if p.id in keep])
    px = np.concatenate([left, right], axis=1)
    px[:, half - 1:half + 1, :3] = 0
    px[:, half - 1:half + 1, 3] = 255
    for letter, x_off in (("A", 0), ("B", half)):
        g = glyph_mask(letter)
        gx, gy = GLYPH_ORIGIN[0] + x_off, GLYPH_ORIGIN[1]
        region = px[gy:gy + g.shape[0], gx:gx + g.shape[1]]
        region[g] = (0, 0, 0, 255)
    return RasterImage(px)


# ----------------------------------------------------------------------------
# Triplets
# ----------------------------------------------------------------------------


def _geometric(doc: SvgDoc, top: TopmostSet, panel: RasterImage) -> str:
    return geometric_caption([doc.get(i) for i in top.path_ids], doc.viewbox)


def build_triplets(doc: SvgDoc, resolution: int = 512, captioner: Optional[Captioner] = None,
                   panels: bool = True) -> list[Triplet]:
    """Peel ``doc`` stratum by stratum into chained triplets.

    ``doc`` is expected to be normalized to ``resolution`` already.
    """
    if not doc.paths:
        raise EmptyDocument("document has no paths")
    caption = captioner or _geometric
    all_masks = dict(zip(doc.path_ids, doc_masks(doc, resolution)))
    out = []
    current = doc
    src = paint_masks(current, [all_masks[i] for i in current.path_ids], resolution)
    step = 0
    while current.paths:
        masks = [all_masks[i] for i in current.path_ids]
        top = topmost_from_masks(current, masks)
        rest = current.without(top.path_ids)
        tar = paint_masks(rest, [all_masks[i] for i in rest.path_ids], resolution)
        panel = compose_panel(current, top, masks, resolution) if panels else None
        prompt = "remove " + caption(current, top, panel)
        changed = int(np.count_nonzero((src.pixels != tar.pixels).any(axis=2)))
        out.append(Triplet(step, prompt, src, tar, panel, top.path_ids, changed))
        current, src, step = rest, tar, step + 1
    return out


def _process_file(args) -> dict:
    path, out_dir, resolution, max_paths = args
    path = Path(path)
    svg_id = path.stem
    try:
        doc = load_svg(path)
    except MalformedXml as e:
        return {"file": path.name, "svg_id": svg_id, "reason": f"malformed_xml: {e}"}
    except UnsupportedFeature as e:
        return {"file": path.name, "svg_id": svg_id, "reason": f"unsupported_feature: {e}"}
    except EmptyDocument:
        return {"file": path.name, "svg_id": svg_id, "reason": "empty_document"}
    except (LayerPeelError, OSError, ValueError) as e:
        return {"file": path.name, "svg_id": svg_id, "reason": f"error: {type(e).__name__}: {e}"}
    if not doc.paths:
        return {"file": path.name, "svg_id": svg_id, "reason": "empty_document"}
    if not filter_by_path_count(doc, max_paths):
        return {"file": path.name, "svg_id": svg_id, "reason": f"path_count: {len(doc.paths)} > {max_paths}"}
    doc = normalize_viewbox(doc, resolution)
    triplets = build_triplets(doc, resolution)
    target = Path(out_dir) / svg_id
    target.mkdir(parents=True, exist_ok=True)
    records = []
    for t in triplets:
        stem = f"step_{t.step_index}"
        names = {k: f"{svg_id}/{stem}_{k}.png" for k in ("src", "tar", "panel")}
        t.src.save(Path(out_dir) / names["src"])
        t.tar.save(Path(out_dir) / names["tar"])
        t.panel.save(Path(out_dir) / names["panel"])
        records.append(TripletRecord(svg_id, t.step_index, t.edit_prompt, names["src"], names["tar"],
                                     t.removed_path_ids, names["panel"], t.changed_pixels).to_json())
    return {"file": path.name, "svg_id": svg_id, "records": records}


def split_sizes(n: int, val: int = PAPER_SPLITS["val"], test: int = PAPER_SPLITS["test"]) -> tuple[int, int, int]:
    """(train, val, test) counts; val and test are capped at a tenth of the corpus each."""
    v = min(val, n // 10)
    t = min(test, n // 10)
    return n - v - t, v, t


def assign_splits(ids: Sequence[str], seed: int, val: int = PAPER_SPLITS["val"], test: int = PAPER_SPLITS["test"]) -> dict:
    ordered = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    _, v, t = split_sizes(len(ordered), val, test)
    return {
        "train": sorted(shuffled[v + t:]),
        "val": sorted(shuffled[:v]),
        "test": sorted(shuffled[v:v + t]),
    }


def build_corpus(
    input_dir,
    output_dir,
    seed: int = 0,
    val: int = PAPER_SPLITS["val"],
    test: int = PAPER_SPLITS["test"],
    resolution: int = 512,
    max_paths: int = MAX_PATHS,
    jobs: int = 1,
) -> CorpusManifest:
    """Process every ``*.svg`` in ``input_dir``; per-file failures are recorded, never raised.

    Writes ``manifest.jsonl`` (one triplet per line) and ``corpus.json``.
    """
    inp, out = Path(input_dir), Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(inp.glob("*.svg"))
    work = [(str(f), str(out), resolution, max_paths) for f in files]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_process_file, work))
    else:
        results = [_process_file(w) for w in work]
    manifest = CorpusManifest()
    lines = []
    for r in results:
        if "reason" in r:
            log.info("rejected %s: %s", r["file"], r["reason"])
            manifest.rejected.append({"file": r["file"], "reason": r["reason"]})
            continue
        manifest.accepted.append(r["svg_id"])
        manifest.triplet_counts[r["svg_id"]] = len(r["records"])
        lines.extend(json.dumps(rec, ensure_ascii=False) for rec in r["records"])
    manifest.splits = assign_splits(manifest.accepted, seed, val, test)
    with open(out / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))
    with open(out / "corpus.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(manifest.to_json(), indent=2, ensure_ascii=False) + "\n")
    return manifest


def read_manifest(output_dir) -> list[TripletRecord]:
    text = (Path(output_dir) / "manifest.jsonl").read_text(encoding="utf-8")
    return [TripletRecord.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
