"""Evaluation metrics: outline Chamfer distance, MSE and the path-drop probe.

Chamfer distance here is the symmetric sum of means over outline samples
spaced uniformly by arc length, 256 per path unless told otherwise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyCloud, EmptyDocument, ServiceUnavailable
from .raster import RasterImage, rasterize
from .svg_core import PathShape, SvgDoc, flatten_path, normalize_viewbox

COLUMNS = ("Path Semantics", "Path Irregularity", "MSE", "LPIPS")
MIN_SAMPLES = 16


@dataclass(frozen=True, eq=False)
class PathPointCloud:
    points: np.ndarray  # (n, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    @property
    def sample_count(self) -> int:
        return len(self.points)

    @classmethod
    def from_path(cls, path: PathShape, samples: int = 256, tolerance: float = 0.05) -> "PathPointCloud":
        """``samples`` points spread evenly by arc length over all of the path's rings."""
        if samples < MIN_SAMPLES:
            raise ValueError(f"need at least {MIN_SAMPLES} samples, got {samples}")
        rings = [np.vstack([r, r[:1]]) for r in flatten_path(path, tolerance) if len(r) >= 2]
        if not rings:
            raise EmptyCloud(f"path {path.id!r} has no outline")
        pts = np.concatenate([r[:-1] for r in rings])
        nxt = np.concatenate([r[1:] for r in rings])
        seg = np.hypot(*(nxt - pts).T)
        total = float(seg.sum())
        if total == 0:
            return cls(np.repeat(pts[:1], samples, axis=0))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        t = np.arange(samples) * (total / samples)
        k = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(seg) - 1)
        frac = np.where(seg[k] > 0, (t - cum[k]) / np.where(seg[k] > 0, seg[k], 1.0), 0.0)
        return cls(pts[k] + frac[:, None] * (nxt[k] - pts[k]))


def chamfer_distance(a: PathPointCloud, b: PathPointCloud) -> float:
    """mean_a min_b |a-b| + mean_b min_a |a-b|."""
    if a.sample_count == 0 or b.sample_count == 0:
        raise EmptyCloud("chamfer distance needs two non-empty clouds")
    da, _ = cKDTree(b.points).query(a.points)
    db, _ = cKDTree(a.points).query(b.points)
    return float(np.mean(da) + np.mean(db))


def path_irregularity(generated: SvgDoc, truth: SvgDoc, samples_per_path: int = 256,
                      color_aware: bool = False, resolution: int = 512) -> float:
    """Mean over generated paths of the smallest Chamfer distance to any truth path.

    Both documents are first normalized onto the same square canvas.  With
    ``color_aware`` a generated path is only matched against truth paths of the
    same fill (falling back to all paths when none share it).
    """
    if not generated.paths or not truth.paths:
        raise EmptyDocument("both documents need at least one path")
    gen = normalize_viewbox(generated, resolution)
    tru = normalize_viewbox(truth, resolution)
    truth_clouds = [(p.fill, PathPointCloud.from_path(p, samples_per_path)) for p in tru.paths]
    scores = []
    for p in gen.paths:
        cloud = PathPointCloud.from_path(p, samples_per_path)
        pool = [c for f, c in truth_clouds if f == p.fill] if color_aware else []
        pool = pool or [c for _, c in truth_clouds]
        scores.append(min(chamfer_distance(cloud, c) for c in pool))
    return float(np.mean(scores))


def mse(a: RasterImage, b: RasterImage) -> float:
    """Mean squared RGB difference on [0, 1]-scaled values."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    d = (a.pixels[..., :3].astype(np.float64) - b.pixels[..., :3].astype(np.float64)) / 255.0
    return float(np.mean(d * d))


def drop_count(n: int, fraction: float) -> int:
    """Paths to drop: ``fraction * n`` rounded half up."""
    return int(math.floor(fraction * n + 0.5))


def drop_paths(doc: SvgDoc, fraction: float = 0.3, seed: int | Sequence[int] = 0) -> SvgDoc:
    """Remove a seeded uniform sample of paths, keeping the survivors' paint order.

    ``fraction`` 0 is accepted as a control that drops nothing.
    """
    if not doc.paths:
        raise EmptyDocument("cannot drop paths from an empty document")
    if not 0 <= fraction < 1:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    k = drop_count(len(doc.paths), fraction)
    idx = np.random.default_rng(seed).choice(len(doc.paths), size=k, replace=False)
    return doc.without(doc.paths[i].id for i in idx.tolist())


class EmbeddingService(Protocol):
    def similarity(self, caption: str, image: RasterImage) -> float: ...


def semantics_drop(doc: SvgDoc, caption: str, embed_service: Optional[EmbeddingService], trials: int = 8,
                   fraction: float = 0.3, seed: int = 0, resolution: int = 512) -> float:
    """Mean drop in caption/image similarity after removing ``fraction`` of the paths."""
    if embed_service is None:
        raise ServiceUnavailable("no embedding service configured")
    doc = normalize_viewbox(doc, resolution)
    base = float(embed_service.similarity(caption, rasterize(doc, resolution)))
    drops = []
    for t in range(trials):
        reduced = drop_paths(doc, fraction, [seed, t])
        drops.append(base - float(embed_service.similarity(caption, rasterize(reduced, resolution))))
    return float(np.mean(drops))


@dataclass
class MetricsRow:
    name: str
    path_semantics: Optional[float] = None
    path_irregularity: Optional[float] = None
    mse: Optional[float] = None
    lpips: Optional[float] = None

    def values(self) -> tuple:
        return (self.path_semantics, self.path_irregularity, self.mse, self.lpips)

    def to_json(self) -> dict:
        return {"name": self.name, **dict(zip(COLUMNS, self.values()))}


def aggregate(rows: Sequence[MetricsRow], name: str = "mean") -> MetricsRow:
    """Column means over the rows that have a value; absent stays absent."""
    cols = []
    for j in range(len(COLUMNS)):
        vals = [r.values()[j] for r in rows if r.values()[j] is not None]
        cols.append(float(np.mean(vals)) if vals else None)
    return MetricsRow(name, *cols)


def write_results(rows: Sequence[MetricsRow], csv_path=None, json_path=None) -> None:
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", *COLUMNS])
            for r in rows:
                w.writerow([r.name, *("" if v is None else repr(v) for v in r.values())])
    if json_path is not None:
        Path(json_path).write_text(json.dumps([r.to_json() for r in rows], indent=2) + "\n", encoding="utf-8")
