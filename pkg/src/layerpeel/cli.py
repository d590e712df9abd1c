"""Command-line entry point: ``layerpeel {peel,dataset,eval,plan-attention}``.

Exit codes: 0 success, 2 configuration or input error, 3 backend failure,
4 peel ended without reaching a blank canvas.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attention import BBoxNorm, TokenLayout, build_joint_mask
from .captions import geometric_caption
from .errors import ConfigError, GatewayError, LayerPeelError, ServiceUnavailable, UnpairedFile
from .raster import RasterImage, rasterize
from .svg_core import load_svg, normalize_viewbox

log = logging.getLogger("layerpeel")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_NOT_BLANK = 4


@dataclass(frozen=True)
class RunConfig:
    resolution: int = 512
    rho: int = 20
    max_iterations: int = 50
    simplify_epsilon: float = 1.0
    backend: str = "oracle"
    annotator_url: Optional[str] = None
    remover_url: Optional[str] = None
    embed_url: Optional[str] = None
    seed: int = 0
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if not 16 <= self.resolution <= 4096:
            raise ConfigError(f"resolution {self.resolution} outside [16, 4096]")
        if not 0 <= self.rho <= 255:
            raise ConfigError(f"rho {self.rho} outside [0, 255]")
        if not 1 <= self.max_iterations <= 10_000:
            raise ConfigError(f"max-iters {self.max_iterations} outside [1, 10000]")
        if self.simplify_epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.backend not in ("oracle", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "remote" and not (self.annotator_url and self.remover_url):
            raise ConfigError("remote backend needs --annotator-url and --remover-url")
        return self


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes and underscores in keys are interchangeable."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    return RunConfig(
        resolution=args.resolution,
        rho=args.rho,
        max_iterations=args.max_iters,
        simplify_epsilon=args.epsilon,
        backend=args.backend,
        annotator_url=args.annotator_url,
        remover_url=args.remover_url,
        embed_url=args.embed_url,
        seed=args.seed,
        jobs=args.jobs,
    ).validate()


def cmd_peel(args) -> int:
    from .gateways import remote_annotator, remote_remover
    from .peel import BACKEND_ERROR, BLANK, PeelConfig, oracle_backends, run, save_trace

    cfg = _run_config(args)
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"{src} does not exist")
    truth = None
    if src.suffix.lower() == ".svg":
        truth = normalize_viewbox(load_svg(src), cfg.resolution)
        image = rasterize(truth, cfg.resolution)
    else:
        image = RasterImage.load(src)
        if image.shape != (cfg.resolution, cfg.resolution):
            raise ConfigError(f"{src} is {image.width}x{image.height}, expected {cfg.resolution} square")
    if cfg.backend == "oracle":
        if truth is None:
            raise ConfigError("oracle backend requires vector truth (an SVG input)")
        annotator, remover = oracle_backends(truth, cfg.resolution)
    else:
        annotator = remote_annotator(cfg.annotator_url)
        remover = remote_remover(cfg.remover_url)
    out_dir = Path(args.out) if args.out else src.with_name(src.stem + "_trace")
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise ConfigError(f"{out_dir} is not empty; use --force or pick a fresh directory")
    config = PeelConfig(max_iterations=cfg.max_iterations, rho=cfg.rho, simplify_epsilon=cfg.simplify_epsilon,
                        seed=cfg.seed)
    trace = run(image, annotator, remover, config)
    save_trace(trace, out_dir, force=args.force)
    if args.svg_out:
        Path(args.svg_out).write_text(trace.final_svg(), encoding="utf-8")
    print(f"{trace.termination}: {len(trace.steps)} step(s), {len(trace.final_doc.paths)} path(s) -> {out_dir}")
    if trace.termination == BACKEND_ERROR:
        print(f"backend error: {trace.error}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK if trace.termination == BLANK else EXIT_NOT_BLANK


def cmd_dataset(args) -> int:
    from .dataset import build_corpus

    cfg = _run_config(args)
    if not Path(args.input_dir).is_dir():
        raise ConfigError(f"{args.input_dir} is not a directory")
    m = build_corpus(args.input_dir, args.output_dir, seed=cfg.seed, val=args.val, test=args.test,
                     resolution=cfg.resolution, max_paths=args.max_paths, jobs=cfg.jobs)
    print(f"accepted {len(m.accepted)}, rejected {len(m.rejected)}, triplets {m.total_triplets}")
    return EXIT_OK


def pair_files(generated_dir, truth_dir) -> list[tuple[str, Path, Path]]:
    gen = {p.stem: p for p in Path(generated_dir).glob("*.svg")}
    tru = {p.stem: p for p in Path(truth_dir).glob("*.svg")}
    lonely = sorted(set(gen) ^ set(tru))
    if lonely:
        raise UnpairedFile(f"no partner for: {', '.join(lonely)}")
    return [(s, gen[s], tru[s]) for s in sorted(gen)]


def _offline_metrics(job) -> tuple:
    from .metrics import mse, path_irregularity

    stem, g, t, resolution = job
    gd = normalize_viewbox(load_svg(g), resolution)
    td = normalize_viewbox(load_svg(t), resolution)
    return stem, path_irregularity(gd, td, resolution=resolution), mse(rasterize(gd, resolution), rasterize(td, resolution))


def cmd_eval(args) -> int:
    from .gateways import embedding_service
    from .metrics import MetricsRow, aggregate, semantics_drop, write_results

    cfg = _run_config(args)
    pairs = pair_files(args.generated_dir, args.truth_dir)
    jobs = [(s, g, t, cfg.resolution) for s, g, t in pairs]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_offline_metrics, jobs))
    else:
        results = [_offline_metrics(j) for j in jobs]
    embed = embedding_service(cfg.embed_url) if cfg.embed_url else None
    rows = []
    for (stem, g, t), (_, irr, err) in zip(pairs, results):
        row = MetricsRow(stem, path_irregularity=irr, mse=err)
        if embed is not None:
            gd = normalize_viewbox(load_svg(g), cfg.resolution)
            td = normalize_viewbox(load_svg(t), cfg.resolution)
            try:
                row.path_semantics = semantics_drop(gd, geometric_caption(td.paths, td.viewbox), embed, seed=cfg.seed,
                                                    resolution=cfg.resolution)
                row.lpips = embed.perceptual_distance(rasterize(gd, cfg.resolution), rasterize(td, cfg.resolution))
            except (GatewayError, ServiceUnavailable) as e:
                log.warning("%s: embedding metrics unavailable (%s)", stem, e)
        rows.append(row)
    rows.append(aggregate(rows))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(rows, out / "metrics.csv", out / "metrics.json")
    mean = rows[-1]
    print(f"{len(pairs)} pair(s): irregularity {mean.path_irregularity}, MSE {mean.mse}")
    return EXIT_OK


def _spans(layout: TokenLayout) -> list[tuple[str, np.ndarray]]:
    n = layout.n_tokens
    blocks = []
    sel = np.zeros(n, bool)
    gs, gl = layout.global_span
    sel[gs:gs + gl] = True
    blocks.append(("global", sel))
    for k, (s, l) in enumerate(layout.instance_spans, start=1):
        sel = np.zeros(n, bool)
        sel[s:s + l] = True
        blocks.append((f"instance{k}", sel))
    sel = np.zeros(n, bool)
    sel[layout.image_offset:] = True
    blocks.append(("image", sel))
    return blocks


def plan_summary(plan) -> str:
    """One line per query block: which key blocks it reaches (all / some)."""
    blocks = _spans(plan.layout)
    lines = []
    for qname, q in blocks:
        sub = plan.allowed[q]
        parts = []
        for kname, k in blocks:
            cell = sub[:, k]
            if cell.all():
                parts.append(f"{kname}:all")
            elif cell.any():
                parts.append(f"{kname}:some")
        lines.append(f"{qname} -> {' '.join(parts) if parts else '(self only)'}")
    return "\n".join(lines)


def _load_boxes(path) -> list[BBoxNorm]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    boxes = []
    for entry in data:
        coords = entry["box"] if isinstance(entry, dict) else entry
        boxes.append(BBoxNorm(*(float(v) for v in coords)))
    return boxes


def cmd_plan_attention(args) -> int:
    try:
        layout = TokenLayout.from_json(json.loads(Path(args.layout).read_text(encoding="utf-8")))
        boxes = _load_boxes(args.boxes)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot read plan inputs: {e}") from None
    plan = build_joint_mask(layout, boxes, args.allow_instance_to_global)
    text = plan.dumps()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(plan_summary(plan))
    else:
        print(text)
        print(plan_summary(plan), file=sys.stderr)
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("oracle", "remote"), default="oracle")
    p.add_argument("--rho", type=int, default=20, help="diff threshold on the max RGB channel")
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--epsilon", type=float, default=1.0, help="contour simplification tolerance in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--annotator-url")
    p.add_argument("--remover-url")
    p.add_argument("--embed-url")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="layerpeel", description="Layer-by-layer vectorization of flat-color images.")
    parser.add_argument("--config", help="key = value file; command-line flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    peel = sub.add_parser("peel", help="peel one SVG or PNG into layers")
    peel.add_argument("input")
    peel.add_argument("--out", help="trace directory (default: <input>_trace)")
    peel.add_argument("--svg-out", help="also write the final SVG here")
    _common(peel)
    peel.set_defaults(func=cmd_peel)

    ds = sub.add_parser("dataset", help="build training triplets from a directory of SVGs")
    ds.add_argument("input_dir")
    ds.add_argument("output_dir")
    ds.add_argument("--val", type=int, default=1000)
    ds.add_argument("--test", type=int, default=1000)
    ds.add_argument("--max-paths", type=int, default=30)
    _common(ds)
    ds.set_defaults(func=cmd_dataset)

    ev = sub.add_parser("eval", help="score generated SVGs against ground truth")
    ev.add_argument("generated_dir")
    ev.add_argument("truth_dir")
    ev.add_argument("--out", default="metrics", help="directory for metrics.csv / metrics.json")
    _common(ev)
    ev.set_defaults(func=cmd_eval)

    pa = sub.add_parser("plan-attention", help="build and summarize a joint attention plan")
    pa.add_argument("layout", help="JSON token layout")
    pa.add_argument("boxes", help="JSON list of [x0, y0, x1, y1] boxes")
    pa.add_argument("--out", help="write the plan JSON here instead of stdout")
    pa.add_argument("--allow-instance-to-global", action="store_true")
    pa.set_defaults(func=cmd_plan_attention)
    return parser, {"peel": peel, "dataset": ds, "eval": ev, "plan-attention": pa}


def _apply_config_file(parser, subparsers, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config_file(known.config)
    for sp in subparsers.values():
        dests = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, raw in values.items():
            action = dests.get(key) or dests.get({"max_iterations": "max_iters"}.get(key, ""))
            if action is None:
                continue
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                continue
            try:
                defaults[action.dest] = action.type(raw) if action.type else raw
            except ValueError:
                raise ConfigError(f"config value {key} = {raw!r} is not a valid {action.type.__name__}") from None
        sp.set_defaults(**defaults)
    unknown = set(values) - {a.dest for sp in subparsers.values() for a in sp._actions} - {"max_iterations"}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        _apply_config_file(parser, subparsers, argv)
        args = parser.parse_args(argv)
    except ConfigError as e:
        print(f"layerpeel: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:  # argparse usage errors
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnpairedFile) as e:
        print(f"layerpeel: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GatewayError as e:
        print(f"layerpeel: backend failure: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (LayerPeelError, OSError, ValueError) as e:
        print(f"layerpeel: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
