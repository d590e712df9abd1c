"""The autoregressive peel loop and its deterministic oracle backends.

Each iteration asks an annotator for a layer graph plus the captions and boxes
of the topmost elements, asks a remover to erase them, and vectorizes whatever
changed.  Only rasters and text cross the backend boundary, so the oracle
backends here and the remote ones in :mod:`layerpeel.gateways` are
interchangeable.
"""
from __future__ import annotations

import json
import logging
import shutil
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .attention import AttentionPlan, BBoxNorm, TokenLayout, build_joint_mask, image_tokens_in_box
from .captions import color_name, geometric_caption, path_phrase
from .errors import (
    AnnotatorError,
    EmptyDocument,
    GatewayError,
    LayerPeelError,
    RemoverError,
    StallDetected,
)
from .layer_graph import INTERRUPTED, OCCLUDES, GraphEdge, GraphNode, LayerGraph
from .occlusion import BitMask, doc_masks, topmost_from_masks
from .raster import RasterImage, diff_mask, extract_region, is_blank, paint_masks, rasterize
from .svg_core import SvgDoc, normalize_viewbox
from .vectorizer import VectorLayer, emit_svg, emit_svg_text, vectorize_region

log = logging.getLogger(__name__)

BLANK = "Blank"
MAX_ITERATIONS = "MaxIterations"
STALLED = "Stalled"
BACKEND_ERROR = "BackendError"


@dataclass(frozen=True)
class Instance:
    box: BBoxNorm
    label: str

    def __post_init__(self):
        if not self.label.strip():
            raise ValueError("instance label must be non-empty")


@dataclass(frozen=True)
class AnnotatorOutput:
    graph: LayerGraph
    global_caption: str
    instances: tuple = ()

    def to_json(self) -> dict:
        return {
            "graph": self.graph.to_json(),
            "global_caption": self.global_caption,
            "instances": [{"box": i.box.to_json(), "label": i.label} for i in self.instances],
        }


@dataclass(frozen=True)
class PeelConfig:
    max_iterations: int = 50
    rho: int = 20
    blank_tolerance: int = 0
    stall_retries: int = 2
    simplify_epsilon: float = 1.0
    image_grid: tuple = (32, 32)
    seed: int = 0
    closing: bool = False
    quantize: bool = False
    allow_instance_to_global: bool = False
    steps: int = 40
    guidance: float = 4.5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 <= self.rho <= 255:
            raise ValueError("rho must be in [0, 255]")
        if self.stall_retries < 0:
            raise ValueError("stall_retries must be non-negative")
        if self.simplify_epsilon < 0:
            raise ValueError("simplify_epsilon must be non-negative")
        if self.steps < 1 or self.guidance <= 0:
            raise ValueError("sampler needs steps >= 1 and guidance > 0")


@dataclass(frozen=True, eq=False)
class PeelStep:
    index: int
    input_image: RasterImage
    annotator_output: AnnotatorOutput
    edit_prompt: str
    output_image: RasterImage
    mask: BitMask
    layer: VectorLayer
    plan: Optional[AttentionPlan] = None
    attempts: int = 1
    warnings: tuple = ()
    timings: dict = field(default_factory=dict)

    @property
    def graph(self) -> LayerGraph:
        return self.annotator_output.graph


@dataclass(eq=False)
class PeelTrace:
    steps: list
    final_doc: SvgDoc
    termination: str
    canvas: int = 512
    error: Optional[dict] = None

    @property
    def layers(self) -> list[VectorLayer]:
        return [s.layer for s in self.steps]

    def final_svg(self) -> str:
        return emit_svg_text(self.layers, self.canvas)


class Annotator(Protocol):
    concurrent_safe: bool

    def annotate(self, image: RasterImage, prev_graph: Optional[LayerGraph]) -> AnnotatorOutput: ...


class Remover(Protocol):
    concurrent_safe: bool

    def remove(self, image: RasterImage, edit_prompt: str, instances: Sequence[Instance],
               plan: Optional[AttentionPlan], sampler: dict) -> RasterImage: ...


_locks_guard = threading.Lock()


def _backend_lock(backend):
    """Per-backend lock used when a backend is not safe for concurrent calls."""
    if getattr(backend, "concurrent_safe", False):
        return None
    with _locks_guard:
        lock = getattr(backend, "_layerpeel_lock", None)
        if lock is None:
            lock = threading.Lock()
            try:
                backend._layerpeel_lock = lock
            except AttributeError:
                return None
        return lock


def _call(backend, method: str, *args):
    lock = _backend_lock(backend)
    fn = getattr(backend, method)
    if lock is None:
        return fn(*args)
    with lock:
        return fn(*args)


# ----------------------------------------------------------------------------
# Planning helpers
# ----------------------------------------------------------------------------


def word_count(text: str) -> int:
    return max(1, len(text.split()))


def snap_box(box: BBoxNorm, grid: tuple) -> BBoxNorm:
    """Grow a box that covers no cell center to the cell holding its center."""
    if image_tokens_in_box(grid, box):
        return box
    rows, cols = grid
    cx, cy = (box.x0 + box.x1) / 2, (box.y0 + box.y1) / 2
    c = min(int(cx * cols), cols - 1)
    r = min(int(cy * rows), rows - 1)
    return BBoxNorm(min(box.x0, c / cols), min(box.y0, r / rows), max(box.x1, (c + 1) / cols), max(box.y1, (r + 1) / rows))


def plan_for(out: AnnotatorOutput, config: PeelConfig) -> AttentionPlan:
    layout = TokenLayout.sequential(
        word_count(out.global_caption), [word_count(i.label) for i in out.instances], config.image_grid
    )
    boxes = [snap_box(i.box, config.image_grid) for i in out.instances]
    return build_joint_mask(layout, boxes, config.allow_instance_to_global)


def edit_prompt_for(global_caption: str) -> str:
    return "remove " + global_caption


def _mask_warnings(mask: BitMask, instances: Sequence[Instance]) -> list[str]:
    h, w = mask.bits.shape
    inside_any = np.zeros((h, w), bool)
    out = []
    for k, inst in enumerate(instances):
        b = inst.box
        c0, c1 = int(np.floor(b.x0 * w)), int(np.ceil(b.x1 * w))
        r0, r1 = int(np.floor(b.y0 * h)), int(np.ceil(b.y1 * h))
        inside_any[r0:r1, c0:c1] = True
        if not mask.bits[r0:r1, c0:c1].any():
            out.append(f"instance {k} ({inst.label!r}) box contains no changed pixels")
    if instances and not inside_any.all():
        labels, n = ndimage.label(mask.bits)
        if n:
            stray = n - np.unique(labels[inside_any & mask.bits]).size
            if stray:
                out.append(f"{stray} changed component(s) lie outside every instance box")
    return out


# ----------------------------------------------------------------------------
# Loop
# ----------------------------------------------------------------------------


def peel_once(
    image: RasterImage,
    prev_graph: Optional[LayerGraph],
    annotator: Annotator,
    remover: Remover,
    config: PeelConfig = PeelConfig(),
    index: int = 0,
) -> PeelStep:
    """One annotate / remove / diff / vectorize round.

    The remover is retried ``config.stall_retries`` times with fresh seeds when
    it returns an image identical (within rho) to its input.
    """
    t0 = time.perf_counter()
    try:
        out = _call(annotator, "annotate", image, prev_graph)
    except (AnnotatorError, GatewayError):
        raise
    except LayerPeelError as e:
        raise AnnotatorError(str(e)) from e
    t1 = time.perf_counter()
    prompt = edit_prompt_for(out.global_caption)
    plan = plan_for(out, config)
    mask = None
    attempt = 0
    for attempt in range(config.stall_retries + 1):
        seed = int(np.random.SeedSequence([config.seed, index, attempt]).generate_state(1)[0])
        sampler = {"steps": config.steps, "guidance": config.guidance, "seed": seed}
        try:
            result = _call(remover, "remove", image, prompt, out.instances, plan, sampler)
        except (RemoverError, GatewayError):
            raise
        except LayerPeelError as e:
            raise RemoverError(str(e)) from e
        if result.shape != image.shape:
            raise RemoverError(f"remover returned {result.shape}, expected {image.shape}")
        mask = diff_mask(image, result, config.rho, closing=config.closing)
        if mask.any():
            break
        log.info("step %d: remover attempt %d changed nothing", index, attempt)
    else:
        raise StallDetected(f"step {index}: no pixel changed after {config.stall_retries + 1} attempts")
    t2 = time.perf_counter()
    region = extract_region(image, mask)
    layer = vectorize_region(region, index, config.simplify_epsilon, quantize=config.quantize)
    t3 = time.perf_counter()
    warnings = tuple(_mask_warnings(mask, out.instances))
    for w in warnings:
        log.warning("step %d: %s", index, w)
    return PeelStep(
        index=index,
        input_image=image,
        annotator_output=out,
        edit_prompt=prompt,
        output_image=result,
        mask=mask,
        layer=layer,
        plan=plan,
        attempts=attempt + 1,
        warnings=warnings,
        timings={"annotate": t1 - t0, "remove": t2 - t1, "vectorize": t3 - t2},
    )


def _error_info(e: Exception) -> dict:
    info = {"type": type(e).__name__, "message": str(e)}
    if isinstance(e, GatewayError):
        raw = e.raw_payload
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", "replace")
        info["raw_payload"] = raw
        info["retries"] = e.retries
    return info


def run(
    image: RasterImage,
    annotator: Annotator,
    remover: Remover,
    config: PeelConfig = PeelConfig(),
) -> PeelTrace:
    """Peel until the canvas is blank, the iteration cap hits, or removal stalls.

    Backend failures end the run with termination ``BackendError`` and the
    error details in ``trace.error`` rather than raising.
    """
    if image.width != image.height:
        raise ValueError(f"image must be square, got {image.width}x{image.height}")
    canvas = image.width
    steps: list[PeelStep] = []
    prev_graph = None
    termination = MAX_ITERATIONS
    error = None
    current = image
    if is_blank(current, config.blank_tolerance):
        termination = BLANK
    else:
        for i in range(config.max_iterations):
            try:
                step = peel_once(current, prev_graph, annotator, remover, config, i)
            except StallDetected as e:
                termination, error = STALLED, _error_info(e)
                break
            except (AnnotatorError, RemoverError, GatewayError) as e:
                termination, error = BACKEND_ERROR, _error_info(e)
                break
            for backend in {id(annotator): annotator, id(remover): remover}.values():
                hook = getattr(backend, "commit", None)
                if hook is not None:
                    hook(step)
            steps.append(step)
            current, prev_graph = step.output_image, step.graph
            if is_blank(current, config.blank_tolerance):
                termination = BLANK
                break
    final = emit_svg([s.layer for s in steps], canvas)
    return PeelTrace(steps, final, termination, canvas, error)


# ----------------------------------------------------------------------------
# Oracle backends
# ----------------------------------------------------------------------------


class OracleScene:
    """Ground-truth document shared by the oracle annotator and remover.

    ``truth`` must be normalized to the raster size.  The annotator records the
    topmost ids it reported; ``commit`` drops them once the loop accepts the
    step, and is idempotent per step index.
    """

    def __init__(self, truth: SvgDoc, resolution: int = 512):
        if not truth.paths:
            raise EmptyDocument("oracle needs a non-empty document")
        self.truth = truth
        self.resolution = resolution
        self._masks = dict(zip(truth.path_ids, doc_masks(truth, resolution)))
        self.pending: tuple = ()
        self._committed = -1
        self.removed_log: list = []
        self.plans: list = []  # audit trail of plans the remover was handed
        self._phrases: dict = {}

    def mask(self, path_id: str) -> BitMask:
        return self._masks[path_id]

    def phrase(self, path) -> str:
        """Cached geometric caption of one truth path."""
        if path.id not in self._phrases:
            self._phrases[path.id] = path_phrase(path, self.truth.viewbox)
        return self._phrases[path.id]

    def topmost(self):
        if not self.truth.paths:
            raise EmptyDocument("no paths left in the oracle scene")
        return topmost_from_masks(self.truth, [self._masks[i] for i in self.truth.path_ids])

    def commit(self, step: PeelStep) -> None:
        if step.index <= self._committed:
            return
        self._committed = step.index
        self.removed_log.append(self.pending)
        self.truth = self.truth.without(self.pending)
        self.pending = ()


def oracle_graph(doc: SvgDoc, masks: dict, fragments: bool = True, phrase=None) -> LayerGraph:
    """Layer graph of ``doc`` from exact coverage.

    ``a occludes b`` when ``a`` is the nearest path above ``b`` at some pixel.
    A path whose visible part falls apart into several 4-connected pieces gets
    one node per piece (``id#k``) tied by ``interrupted_shape`` edges.
    """
    ids = doc.path_ids
    if not ids:
        return LayerGraph()
    h, w = next(iter(masks.values())).bits.shape
    nearest = np.full((h, w), -1, np.int64)
    above = np.zeros((h, w), bool)
    pairs: set = set()
    visible: dict[str, np.ndarray] = {}
    for k in range(len(ids) - 1, -1, -1):
        win = masks[ids[k]].window()
        m = masks[ids[k]].bits[win]
        near = nearest[win]
        hits = near[m]
        for src in np.unique(hits[hits >= 0]).tolist():
            pairs.add((src, k))
        visible[ids[k]] = m & ~above[win]
        above[win] |= m
        near[m] = k
    pieces: dict[str, list[str]] = {}
    nodes = []
    for p in doc.paths:
        desc = phrase(p) if phrase else path_phrase(p, doc.viewbox)
        cname = color_name(p.fill)
        n = 0
        if fragments and visible[p.id].any():
            _, n = ndimage.label(visible[p.id])
        if n >= 2:
            pieces[p.id] = [f"{p.id}#{j}" for j in range(1, n + 1)]
            for j, nid in enumerate(pieces[p.id], start=1):
                nodes.append(GraphNode(nid, f"{desc} (part {j} of {n})", cname, p.id))
        else:
            pieces[p.id] = [p.id]
            nodes.append(GraphNode(p.id, desc, cname))
    edges = []
    for src, dst in sorted(pairs, key=lambda t: (-t[0], -t[1])):
        for a in pieces[ids[src]]:
            for b in pieces[ids[dst]]:
                edges.append(GraphEdge(a, b, OCCLUDES))
    for pid in ids:
        group = pieces[pid]
        for a, b in zip(group, group[1:]):
            edges.append(GraphEdge(a, b, INTERRUPTED))
    return LayerGraph(tuple(nodes), tuple(edges))


class OracleAnnotator:
    """Annotator answering from the scene's ground-truth geometry."""

    concurrent_safe = False

    def __init__(self, scene: OracleScene):
        self.scene = scene

    def annotate(self, image: RasterImage, prev_graph: Optional[LayerGraph]) -> AnnotatorOutput:
        sc = self.scene
        top = sc.topmost()
        sc.pending = top.path_ids
        graph = oracle_graph(sc.truth, {i: sc.mask(i) for i in sc.truth.path_ids}, phrase=sc.phrase)
        instances = []
        for pid in top.path_ids:
            bbox = sc.mask(pid).bbox()
            if bbox is None:
                continue  # covers no pixel center at this resolution
            path = sc.truth.get(pid)
            instances.append(Instance(BBoxNorm.from_pixels(bbox, image.width, image.height), sc.phrase(path)))
        if instances:
            caption = ", ".join(i.label for i in instances)
        else:
            caption = geometric_caption([sc.truth.get(p) for p in top.path_ids], sc.truth.viewbox)
        return AnnotatorOutput(graph, caption, tuple(instances))

    def commit(self, step: PeelStep) -> None:
        self.scene.commit(step)


class OracleRemover:
    """Remover that renders the scene without its topmost stratum."""

    concurrent_safe = False

    def __init__(self, scene: OracleScene):
        self.scene = scene

    def remove(self, image, edit_prompt, instances, plan, sampler) -> RasterImage:
        sc = self.scene
        ids = sc.pending or sc.topmost().path_ids
        sc.plans.append(plan)
        rest = sc.truth.without(ids)
        return paint_masks(rest, [sc.mask(i) for i in rest.path_ids], sc.resolution)

    def commit(self, step: PeelStep) -> None:
        self.scene.commit(step)


def oracle_backends(truth: SvgDoc, resolution: int = 512) -> tuple[OracleAnnotator, OracleRemover]:
    scene = OracleScene(truth, resolution)
    return OracleAnnotator(scene), OracleRemover(scene)


def run_oracle(truth: SvgDoc, config: PeelConfig = PeelConfig(), resolution: int = 512) -> PeelTrace:
    """Convenience: rasterize ``truth`` and peel it with oracle backends."""
    doc = normalize_viewbox(truth, resolution)
    annotator, remover = oracle_backends(doc, resolution)
    return run(rasterize(doc, resolution), annotator, remover, config)


# ----------------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------------

_TRACE_FILES = ("step_*", "final.svg", "manifest.json")


def save_trace(trace: PeelTrace, directory, force: bool = False) -> Path:
    """Write PNGs, per-step JSON, the final SVG and a manifest.

    A non-empty target directory is refused unless ``force``, in which case
    files from an earlier trace are cleared first.
    """
    d = Path(directory)
    if d.exists() and any(d.iterdir()):
        if not force:
            raise FileExistsError(f"{d} is not empty; pass force=True to overwrite")
        for pattern in _TRACE_FILES:
            for p in d.glob(pattern):
                if p.is_dir():
                    shutil.rmtree(p)
                else:
                    p.unlink()
    d.mkdir(parents=True, exist_ok=True)
    for s in trace.steps:
        stem = f"step_{s.index:03d}"
        s.input_image.save(d / f"{stem}_src.png")
        s.output_image.save(d / f"{stem}_out.png")
        (d / f"{stem}_mask.png").write_bytes(s.mask.to_png())
        info = {
            "index": s.index,
            "annotator_output": s.annotator_output.to_json(),
            "edit_prompt": s.edit_prompt,
            "attempts": s.attempts,
            "mask_pixels": s.mask.count(),
            "shapes": [p.id for p in s.layer.shapes],
            "warnings": list(s.warnings),
            "timings": s.timings,
        }
        (d / f"{stem}.json").write_text(json.dumps(info, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    (d / "final.svg").write_text(trace.final_svg(), encoding="utf-8")
    manifest = {
        "termination": trace.termination,
        "steps": len(trace.steps),
        "canvas": trace.canvas,
        "paths": len(trace.final_doc.paths),
        "error": trace.error,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return d
