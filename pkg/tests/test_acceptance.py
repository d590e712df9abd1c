"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from layerpeel.attention import BBoxNorm, build_joint_mask, image_tokens_in_box
from layerpeel.dataset import build_corpus, read_manifest
from layerpeel.errors import GraphError, ProtocolError
from layerpeel.gateways import parse_tagged_response, remote_annotator, remote_remover
from layerpeel.layer_graph import non_occluded_nodes, parse_graph, serialize
from layerpeel.metrics import PathPointCloud, chamfer_distance, drop_count, drop_paths, mse, path_irregularity
from layerpeel.occlusion import BitMask, coverage_mask, peel_generations, pixel_polygons, topmost_set
from layerpeel.peel import BACKEND_ERROR, BLANK, PeelConfig, run, run_oracle
from layerpeel.raster import RasterImage, composite_over, diff_mask, extract_region, rasterize
from layerpeel.svg_core import ColorRGBA, PathShape, SvgDoc, normalize_viewbox, parse_svg, polygon_subpath, to_svg
from layerpeel.synthetic import random_doc
from layerpeel.vectorizer import emit_svg

from oracles import (
    chamfer_brute,
    coverage_oracle,
    layout_for,
    painter_render,
    painter_topmost,
    random_attention_case,
    reference_plan,
)
from stubs import StubServer, replay_routes

FIXTURES = Path(__file__).parent / "fixtures"
RES = 512


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def test_1_topmost_matches_painter(report):
    failures, oracle_time, impl_time = [], 0.0, 0.0
    for seed in range(1000):
        doc = random_doc([1, seed], min_paths=3, max_paths=15)
        t0 = time.perf_counter()
        got = topmost_set(doc, RES).ids
        impl_time += time.perf_counter() - t0
        t0 = time.perf_counter()
        masks = [coverage_oracle(pixel_polygons(p, RES, doc.viewbox), p.fill_rule, RES, RES) for p in doc.paths]
        want = painter_topmost(masks, doc.path_ids)
        oracle_time += time.perf_counter() - t0
        if got != want:
            failures.append(seed)
    ok = not failures and impl_time < 120
    report(1, ok, f"1000 docs, {len(failures)} mismatches {failures[:5]}, topmost_set {impl_time:.1f}s, "
                  f"oracle {oracle_time:.1f}s")


def test_2_oracle_round_trip(report):
    exact_fail, approx_fail, worst = [], [], 1.0
    t0 = time.perf_counter()
    for seed in range(100):
        doc = random_doc([2, seed])
        original = rasterize(doc, RES)
        painted = painter_render(doc, [coverage_mask(p, RES, doc.viewbox).bits for p in doc.paths], RES)
        assert np.array_equal(original.pixels, painted)
        for eps, bucket in ((0.0, exact_fail), (1.0, approx_fail)):
            trace = run_oracle(doc, PeelConfig(simplify_epsilon=eps), RES)
            out = rasterize(emit_svg(trace.layers, RES), RES)
            same = float((out.pixels == original.pixels).all(axis=2).mean())
            if trace.termination != BLANK:
                bucket.append(seed)
            elif eps == 0 and same != 1.0:
                bucket.append(seed)
            elif eps == 1 and same < 0.995:
                bucket.append(seed)
            if eps == 1:
                worst = min(worst, same)
    elapsed = time.perf_counter() - t0
    ok = not exact_fail and not approx_fail and elapsed < 60
    report(2, ok, f"100 docs, eps0 failures {exact_fail}, eps1 failures {approx_fail}, "
                  f"worst eps1 match {worst:.4%}, {elapsed:.1f}s")


def test_3_diff_mask_exact(report):
    checked, skipped, failures = 0, 0, []
    for seed in range(50):
        doc = random_doc([3, seed], min_contrast=21)
        trace = run_oracle(doc, PeelConfig(simplify_epsilon=0), RES)
        gens = peel_generations(doc, RES)
        assert len(gens) == len(trace.steps)
        for k, (step, removed) in enumerate(zip(trace.steps, gens)):
            union = np.zeros((RES, RES), bool)
            for pid in removed:
                union |= coverage_mask(doc.get(pid), RES, doc.viewbox).bits
            before, after = step.input_image.pixels[union], step.output_image.pixels[union]
            contrast = np.abs(before[:, :3].astype(int) - after[:, :3].astype(int)).max(axis=1)
            if (contrast <= 20).any():
                skipped += 1
                continue
            checked += 1
            mask = diff_mask(step.input_image, step.output_image, 20)
            if not (np.array_equal(mask.bits, union) and np.array_equal(step.mask.bits, union)):
                failures.append((seed, k))
    ok = not failures and checked > 0
    report(3, ok, f"50 docs, {checked} steps checked, {skipped} below contrast, {len(failures)} failures")


def test_4_dataset_chaining(tmp_path, report):
    inp = tmp_path / "svgs"
    inp.mkdir()
    docs = {}
    for k in range(20):
        doc = random_doc([4, k], max_paths=10)
        docs[f"doc{k:02d}"] = doc
        (inp / f"doc{k:02d}.svg").write_text(to_svg(doc), encoding="utf-8")
    out = tmp_path / "corpus"
    manifest = build_corpus(inp, out, seed=0, val=2, test=2)
    records = read_manifest(out)
    problems = []
    for svg_id, doc in docs.items():
        recs = sorted((r for r in records if r.svg_id == svg_id), key=lambda r: r.step_index)
        if len(recs) != len(peel_generations(normalize_viewbox(doc, RES), RES)):
            problems.append(f"{svg_id}: count")
        srcs = [RasterImage.load(out / r.src_image_path) for r in recs]
        tars = [RasterImage.load(out / r.tar_image_path) for r in recs]
        if any(a != b for a, b in zip(tars, srcs[1:])):
            problems.append(f"{svg_id}: chain")
        canvas = tars[-1]
        for src, tar in zip(reversed(srcs), reversed(tars)):
            stratum = extract_region(src, BitMask((src.pixels != tar.pixels).any(axis=2)))
            canvas = composite_over(stratum, canvas)
        if canvas != rasterize(normalize_viewbox(doc, RES), RES):
            problems.append(f"{svg_id}: reverse composite")
    ok = not problems and len(manifest.accepted) == 20
    report(4, ok, f"20 docs, {len(records)} triplets, problems {problems[:5]}")


def _shrunk(boxes, rng, grid):
    out = []
    for b in boxes:
        for f in (rng.uniform(0.05, 0.9), 0.5, 0.25, 0.1, 0.0):
            s = b.shrink(f)
            if image_tokens_in_box(grid, s):
                out.append(s)
                break
    return out


def test_5_attention_rules(report):
    mismatches, monotone_fail, cases, strict = [], [], 0, 0
    rng = np.random.default_rng(5)
    for grid in ((4, 4), (8, 8)):
        for n in range(4):
            for _ in range(25):
                n_tokens, g, spans, raw = random_attention_case(rng, grid, n)
                layout = layout_for(n_tokens, g, spans, grid)
                boxes = [BBoxNorm(*b) for b in raw]
                plan = build_joint_mask(layout, boxes)
                cases += 1
                if not np.array_equal(plan.allowed, reference_plan(n_tokens, g, spans, grid, raw)):
                    mismatches.append((grid, n))
                small = _shrunk(boxes, rng, grid)
                shrunk = build_joint_mask(layout, small).allowed
                if (shrunk & ~plan.allowed).any():
                    monotone_fail.append((grid, n))
                strict += int(small != boxes)
    ok = cases == 200 and not mismatches and not monotone_fail
    report(5, ok, f"{cases} cases, {len(mismatches)} reference mismatches, {len(monotone_fail)} monotonicity "
                  f"violations ({strict} with boxes actually shrunk)")


def _mutations(seed_text, rng, count):
    alphabet = list('{}[]":,\\/ \n\t0123456789abcdefnrstu') + ["//", "null", "true", "\ud800", "\x00"]
    for k in range(count):
        s = seed_text
        mode = k % 5
        if mode == 0:
            i = int(rng.integers(0, len(s) + 1))
            s = s[:i]
        elif mode == 1:
            for _ in range(int(rng.integers(1, 8))):
                i = int(rng.integers(0, len(s)))
                s = s[:i] + s[i + 1:]
        elif mode == 2:
            for _ in range(int(rng.integers(1, 8))):
                i = int(rng.integers(0, len(s) + 1))
                s = s[:i] + str(rng.choice(alphabet)) + s[i:]
        elif mode == 3:
            s = "".join(str(c) for c in rng.choice(alphabet, size=int(rng.integers(0, 60))))
        else:
            obj = json.loads(seed_text)
            target = obj["nodes"] if rng.random() < 0.5 else obj["edges"]
            if target:
                entry = target[int(rng.integers(0, len(target)))]
                key = str(rng.choice(list(entry)))
                entry[key] = [None, 1, [], {}, True][int(rng.integers(0, 5))]
            s = json.dumps(obj)
        yield s


def test_6_layer_graph_conformance(report):
    tags = parse_tagged_response((FIXTURES / "cat_response.txt").read_text(encoding="utf-8"))
    cat = parse_graph(tags["layer_graph"])
    top = non_occluded_nodes(cat)
    want = {"N3", "N9", "N10", "N11", "N12", "N15", "N16", "N17"}
    text = serialize(cat)
    stable = serialize(parse_graph(text)) == text and parse_graph(text) == cat
    rng = np.random.default_rng(6)
    crashes, errors, parsed = [], 0, 0
    for s in _mutations(text, rng, 10_000):
        try:
            parse_graph(s)
            parsed += 1
        except GraphError:
            errors += 1
        except Exception as e:  # anything else is a crash
            crashes.append(f"{type(e).__name__}: {e}")
    ok = top == want and stable and not crashes and parsed + errors == 10_000
    report(6, ok, f"cat non-occluded {sorted(top, key=lambda i: int(i[1:]))}, round trip stable {stable}, "
                  f"fuzz: {errors} errors, {parsed} parsed, {len(crashes)} crashes")


def test_7_metric_identities(report):
    rng = np.random.default_rng(7)
    problems = []
    cloud = PathPointCloud(rng.uniform(0, 100, (64, 2)))
    if chamfer_distance(cloud, cloud) != 0:
        problems.append("CD(x,x)")
    for seed in range(5):
        doc = random_doc([7, seed])
        if path_irregularity(doc, doc) != 0:
            problems.append(f"irregularity doc {seed}")
    black, white = RasterImage.filled(8, 8, ColorRGBA(0, 0, 0)), RasterImage.filled(8, 8, ColorRGBA(255, 255, 255))
    if (mse(black, black), mse(white, white), mse(black, white)) != (0.0, 0.0, 1.0):
        problems.append("mse extremes")
    worst = 0.0
    for _ in range(100):
        a = rng.normal(0, 50, (int(rng.integers(1, 120)), 2))
        b = rng.normal(10, 50, (int(rng.integers(1, 120)), 2))
        err = abs(chamfer_distance(PathPointCloud(a), PathPointCloud(b)) - chamfer_brute(a, b))
        worst = max(worst, err)
    if worst > 1e-9:
        problems.append(f"CD vs brute {worst:g}")
    for n in range(1, 31):
        doc = SvgDoc((0, 0, 512, 512), tuple(
            PathShape(f"p{k}", ColorRGBA(k, 0, 0), "nonzero", (polygon_subpath([(k, 0), (k + 5, 0), (k, 5)]),))
            for k in range(n)))
        a, b = drop_paths(doc, 0.3, seed=n), drop_paths(doc, 0.3, seed=n)
        removed = n - len(a.paths)
        if removed != int(np.floor(0.3 * n + 0.5)) or removed != drop_count(n, 0.3) or a.path_ids != b.path_ids:
            problems.append(f"drop_paths n={n}")
    report(7, not problems, f"identities checked, CD max error vs brute {worst:.2e}, problems {problems}")


def test_8_corpus_filters(tmp_path, report):
    def doc_with(n):
        return SvgDoc((0, 0, 512, 512), tuple(
            PathShape(f"p{k}", ColorRGBA(k * 8, 0, 0), "nonzero",
                      (polygon_subpath([(k * 16, 0), (k * 16 + 8, 0), (k * 16 + 8, 8)]),)) for k in range(n)))

    inp = tmp_path / "in"
    inp.mkdir()
    (inp / "thirty.svg").write_text(to_svg(doc_with(30)))
    (inp / "thirtyone.svg").write_text(to_svg(doc_with(31)))
    m = build_corpus(inp, tmp_path / "out", resolution=64)
    filters_ok = m.accepted == ["thirty"] and [r["file"] for r in m.rejected] == ["thirtyone.svg"]
    rng = np.random.default_rng(8)
    bad = []
    for k in range(200):
        w, h = rng.uniform(1, 5000, 2)
        x, y = rng.uniform(-1000, 1000, 2)
        src = SvgDoc((float(x), float(y), float(w), float(h)), (PathShape("a", ColorRGBA(0, 0, 0), "nonzero", (
            polygon_subpath([(x, y), (x + w, y + h / 2), (x + w / 3, y + h)]),)),))
        once = normalize_viewbox(src, 512)
        twice = normalize_viewbox(once, 512)
        if once.viewbox != (0, 0, 512, 512) or to_svg(once) != to_svg(twice) or not all(
                np.array_equal(p.subpaths[0], q.subpaths[0]) for p, q in zip(once.paths, twice.paths)):
            bad.append(k)
    report(8, filters_ok and not bad, f"30 accepted / 31 rejected: {filters_ok}; normalization non-idempotent on "
                                      f"{len(bad)} of 200 viewboxes")


def test_9_gateway_robustness(report):
    session = json.loads((FIXTURES / "replay_session.json").read_text(encoding="utf-8"))
    image = rasterize(parse_svg(session["svg"]), session["resolution"])
    cfg = PeelConfig(image_grid=(16, 16))

    def peel(routes, sleeps):
        with StubServer(routes) as s:
            ann = remote_annotator(s.url, sleep=sleeps.append)
            rem = remote_remover(s.url, sleep=sleeps.append)
            trace = run(image, ann, rem, cfg)
        return trace, [(serialize(st.graph), st.edit_prompt, st.annotator_output.instances,
                        st.output_image.to_png(), st.mask.bits.tobytes()) for st in trace.steps]

    first, a = peel(replay_routes(session), [])
    _, b = peel(replay_routes(session), [])
    deterministic = a == b and first.termination == session["termination"] and len(a) == len(session["remove"])
    faulty = replay_routes(session)
    faulty["annotate"][0:0] = [(500, {}), (500, {})]
    faulty["remove"][1:1] = [(503, {})]
    sleeps = []
    retried, c = peel(faulty, sleeps)
    retries_ok = c == a and retried.termination == BLANK and len(sleeps) == 3 and sleeps[:2] == [0.5, 1.0]
    bad_text = '<layer_graph>{"nodes": [{"id": }]}</layer_graph><caption>x</caption>'
    broken, _ = peel({"annotate": [(200, {"protocol_version": "1", "text": bad_text})]}, [])
    surfaced = (broken.termination == BACKEND_ERROR and broken.error["type"] == ProtocolError.__name__
                and json.loads(broken.error.get("raw_payload") or "{}").get("text") == bad_text)
    ok = deterministic and retries_ok and surfaced
    report(9, ok, f"replay deterministic {deterministic}, faults retried {retries_ok} (sleeps {sleeps}), "
                  f"malformed payload surfaced {surfaced}")
