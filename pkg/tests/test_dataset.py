import json

import numpy as np
import pytest

from layerpeel.dataset import (
    CHECKER_CELL,
    CHECKER_DARK,
    CHECKER_LIGHT,
    CorpusManifest,
    assign_splits,
    build_corpus,
    build_triplets,
    checkerboard,
    compose_panel,
    read_manifest,
    split_sizes,
)
from layerpeel.errors import EmptyDocument
from layerpeel.occlusion import BitMask, TopmostSet, peel_generations, topmost_set
from layerpeel.raster import RasterImage, is_blank, rasterize
from layerpeel.svg_core import ColorRGBA, PathShape, SvgDoc, polygon_subpath, to_svg
from layerpeel.synthetic import nested_squares, random_doc

RED, BLUE = ColorRGBA(255, 0, 0), ColorRGBA(0, 0, 255)


def rect(pid, x0, y0, x1, y1, fill=RED):
    return PathShape(pid, fill, "nonzero", (polygon_subpath([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]),))


def write_docs(folder, docs):
    folder.mkdir(parents=True, exist_ok=True)
    for name, doc in docs.items():
        (folder / f"{name}.svg").write_text(to_svg(doc))


class TestPanel:
    def test_geometry(self):
        doc = nested_squares(2)
        panel = compose_panel(doc, topmost_set(doc))
        assert (panel.width, panel.height) == (1024, 512)
        assert (panel.pixels[:, 511:513, :3] == 0).all()

    def test_empty_topmost_shows_checkerboard(self):
        doc = nested_squares(2, size=128)
        panel = compose_panel(doc, TopmostSet((), BitMask.empty(128, 128)), half=128)
        right = panel.pixels[40:, 130:]
        assert np.array_equal(right, checkerboard(256, 128)[40:, 130:])

    def test_left_half_matches_render(self):
        doc = nested_squares(3, size=128)
        panel = compose_panel(doc, topmost_set(doc, 128), half=128)
        img = rasterize(doc, 128).pixels
        painted = (img[..., :3] < 255).any(axis=2)
        painted[:, 126:] = False
        painted[:40, :40] = False  # glyph corner
        assert np.array_equal(panel.pixels[:, :128][painted], img[painted])

    def test_checkerboard_tiles(self):
        board = checkerboard(64, 48)
        assert board[0, 0, 0] == CHECKER_LIGHT
        for y in range(0, 48, CHECKER_CELL):
            for x in range(0, 64, CHECKER_CELL):
                want = CHECKER_LIGHT if (x // CHECKER_CELL + y // CHECKER_CELL) % 2 == 0 else CHECKER_DARK
                tile = board[y:y + CHECKER_CELL, x:x + CHECKER_CELL, :3]
                assert (tile == want).all()

    def test_glyphs_drawn(self):
        doc = nested_squares(1, size=128)
        panel = compose_panel(doc, topmost_set(doc, 128), half=128).pixels
        for x_off in (0, 128):
            corner = panel[8:36, 8 + x_off:28 + x_off, :3]
            assert (corner == 0).all(axis=2).sum() > 20


class TestTriplets:
    def test_single_path(self):
        doc = SvgDoc((0, 0, 128, 128), (rect("a", 10, 10, 60, 60),))
        (t,) = build_triplets(doc, 128)
        assert is_blank(t.tar) and t.removed_path_ids == ("a",)
        assert t.edit_prompt == "remove the red rectangle at top-left"

    def test_stacked_pair_chains(self):
        doc = nested_squares(2, size=128)
        a, b = build_triplets(doc, 128)
        assert a.tar == b.src
        assert a.removed_path_ids == ("s1",) and b.removed_path_ids == ("s0",)

    def test_disjoint_paths_one_step(self):
        doc = SvgDoc((0, 0, 128, 128), tuple(rect(f"r{k}", 4 + 24 * k, 4, 20 + 24 * k, 20) for k in range(5)))
        (t,) = build_triplets(doc, 128, panels=False)
        assert set(t.removed_path_ids) == {f"r{k}" for k in range(5)}

    def test_empty(self):
        with pytest.raises(EmptyDocument):
            build_triplets(SvgDoc((0, 0, 1, 1), ()), 16)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariants(self, seed):
        doc = random_doc(seed, size=128)
        ts = build_triplets(doc, 128, panels=False)
        assert len(ts) == len(peel_generations(doc, 128)) <= len(doc.paths)
        assert ts[0].src == rasterize(doc, 128)
        for a, b in zip(ts, ts[1:]):
            assert a.tar == b.src
        assert is_blank(ts[-1].tar)
        # reverse compositing: paint each stratum's changed pixels back onto white
        canvas = ts[-1].tar.pixels.copy()
        for t in reversed(ts):
            changed = (t.src.pixels != t.tar.pixels).any(axis=2)
            canvas[changed] = t.src.pixels[changed]
        assert np.array_equal(canvas, rasterize(doc, 128).pixels)

    def test_custom_captioner(self):
        ts = build_triplets(nested_squares(2, size=64), 64, captioner=lambda d, top, panel: "the thing")
        assert [t.edit_prompt for t in ts] == ["remove the thing"] * 2


class TestSplits:
    @pytest.mark.parametrize("n,want", [(0, (0, 0, 0)), (9, (9, 0, 0)), (25, (21, 2, 2)),
                                        (115_700, (113_700, 1000, 1000))])
    def test_sizes(self, n, want):
        assert split_sizes(n) == want

    def test_partition_and_determinism(self):
        ids = [f"doc{k:03d}" for k in range(200)]
        s = assign_splits(ids, seed=3, val=15, test=10)
        assert [len(s[k]) for k in ("train", "val", "test")] == [175, 15, 10]
        assert sorted(s["train"] + s["val"] + s["test"]) == ids
        assert s == assign_splits(list(reversed(ids)), seed=3, val=15, test=10)
        assert s != assign_splits(ids, seed=4, val=15, test=10)


class TestCorpus:
    def test_empty_dir(self, tmp_path):
        (tmp_path / "in").mkdir()
        m = build_corpus(tmp_path / "in", tmp_path / "out")
        assert m.accepted == [] and m.total_triplets == 0
        assert (tmp_path / "out" / "manifest.jsonl").read_text() == ""

    def test_counts_and_layout(self, tmp_path):
        docs = {f"d{k}": nested_squares(3, size=200) for k in range(10)}
        write_docs(tmp_path / "in", docs)
        m = build_corpus(tmp_path / "in", tmp_path / "out", resolution=64, val=1, test=1)
        assert m.total_triplets == 30
        assert sum(len(v) for v in m.splits.values()) == 10
        recs = read_manifest(tmp_path / "out")
        assert len(recs) == 30
        for r in recs:
            for p in (r.src_image_path, r.tar_image_path, r.panel_image_path):
                assert (tmp_path / "out" / p).exists()
        by_doc = {}
        for r in recs:
            by_doc.setdefault(r.svg_id, []).append(r)
        for rs in by_doc.values():
            rs.sort(key=lambda r: r.step_index)
            for a, b in zip(rs, rs[1:]):
                assert RasterImage.load(tmp_path / "out" / a.tar_image_path) == \
                    RasterImage.load(tmp_path / "out" / b.src_image_path)

    def test_rejections_recorded(self, tmp_path):
        inp = tmp_path / "in"
        many = SvgDoc((0, 0, 512, 512), tuple(rect(f"r{k}", k * 10, 0, k * 10 + 5, 5) for k in range(31)))
        write_docs(inp, {"good": nested_squares(2), "many": many})
        (inp / "broken.svg").write_text("<svg><rect")
        (inp / "empty.svg").write_text('<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 10 10"/>')
        (inp / "filtered.svg").write_text('<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 10 10">'
                                          '<defs><filter id="f"/></defs><rect width="5" height="5" filter="url(#f)"/>'
                                          '</svg>')
        m = build_corpus(inp, tmp_path / "out", resolution=64)
        assert m.accepted == ["good"]
        reasons = {r["file"]: r["reason"].split(":")[0] for r in m.rejected}
        assert reasons["many.svg"] == "path_count"
        assert reasons["broken.svg"] == "malformed_xml"
        assert reasons["empty.svg"] == "empty_document"
        assert reasons["filtered.svg"] == "unsupported_feature"
        summary = json.loads((tmp_path / "out" / "corpus.json").read_text())
        assert summary["rejected_count"] == 4 and summary["accepted_count"] == 1
        assert CorpusManifest.from_json(summary).to_json() == summary

    def test_deterministic_bytes(self, tmp_path):
        write_docs(tmp_path / "in", {f"r{k}": random_doc(k, size=300) for k in range(3)})

        def snapshot(out):
            build_corpus(tmp_path / "in", out, resolution=64, seed=7)
            return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}

        assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")

    def test_parallel_matches_serial(self, tmp_path):
        write_docs(tmp_path / "in", {f"r{k}": random_doc(k, size=300) for k in range(3)})
        build_corpus(tmp_path / "in", tmp_path / "s", resolution=48)
        build_corpus(tmp_path / "in", tmp_path / "p", resolution=48, jobs=2)
        assert (tmp_path / "s" / "manifest.jsonl").read_bytes() == (tmp_path / "p" / "manifest.jsonl").read_bytes()
