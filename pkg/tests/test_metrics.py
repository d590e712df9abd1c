import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layerpeel.errors import DimensionMismatch, EmptyCloud, EmptyDocument, ServiceUnavailable
from layerpeel.metrics import (
    COLUMNS,
    MetricsRow,
    PathPointCloud,
    aggregate,
    chamfer_distance,
    drop_count,
    drop_paths,
    mse,
    path_irregularity,
    semantics_drop,
    write_results,
)
from layerpeel.raster import RasterImage
from layerpeel.svg_core import ColorRGBA, PathShape, SvgDoc, polygon_subpath
from layerpeel.synthetic import random_doc

from oracles import chamfer_brute

RED = ColorRGBA(255, 0, 0)


def square(pid, x, y, s, fill=RED):
    return PathShape(pid, fill, "nonzero", (polygon_subpath([(x, y), (x + s, y), (x + s, y + s), (x, y + s)]),))


def shifted(doc, dx, dy):
    return SvgDoc(doc.viewbox, tuple(
        PathShape(p.id, p.fill, p.fill_rule, tuple(s + np.array([dx, dy]) for s in p.subpaths)) for p in doc.paths))


class TestChamfer:
    def test_identical(self):
        c = PathPointCloud(np.random.default_rng(0).uniform(0, 10, (50, 2)))
        assert chamfer_distance(c, c) == 0

    def test_single_points(self):
        assert chamfer_distance(PathPointCloud([[0, 0]]), PathPointCloud([[3, 4]])) == 10

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            chamfer_distance(PathPointCloud(np.zeros((0, 2))), PathPointCloud([[0, 0]]))

    def test_translated_square_matches_brute(self):
        a = PathPointCloud.from_path(square("a", 0, 0, 1), 256)
        b = PathPointCloud.from_path(square("b", 3, 0, 1), 256)
        assert abs(chamfer_distance(a, b) - chamfer_brute(a.points, b.points)) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_and_brute(self, seed):
        rng = np.random.default_rng(seed)
        a = PathPointCloud(rng.normal(size=(int(rng.integers(1, 40)), 2)) * 10)
        b = PathPointCloud(rng.normal(size=(int(rng.integers(1, 40)), 2)) * 10)
        d = chamfer_distance(a, b)
        assert d == pytest.approx(chamfer_distance(b, a), abs=1e-12)
        assert abs(d - chamfer_brute(a.points, b.points)) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
    def test_translation_bound(self, seed, tx, ty):
        rng = np.random.default_rng(seed)
        a = PathPointCloud(rng.uniform(0, 20, (30, 2)))
        b = PathPointCloud(rng.uniform(0, 20, (25, 2)))
        moved = PathPointCloud(b.points + [tx, ty])
        assert chamfer_distance(a, moved) >= chamfer_distance(a, b) - 2 * np.hypot(tx, ty) - 1e-9


class TestSampling:
    def test_count_and_spacing(self):
        c = PathPointCloud.from_path(square("s", 0, 0, 10), 40)
        assert c.sample_count == 40
        steps = np.hypot(*np.diff(np.vstack([c.points, c.points[:1]]), axis=0).T)
        assert np.allclose(steps, 1.0)

    def test_minimum(self):
        with pytest.raises(ValueError):
            PathPointCloud.from_path(square("s", 0, 0, 10), 8)


class TestIrregularity:
    @pytest.mark.parametrize("seed", range(3))
    def test_self_zero(self, seed):
        doc = random_doc(seed, max_paths=6)
        assert path_irregularity(doc, doc) == 0

    def test_uniform_shift(self):
        doc = SvgDoc((0, 0, 512, 512), (square("a", 40, 40, 100), square("b", 300, 300, 60)))
        moved = shifted(doc, 2, 0)
        got = path_irregularity(moved, doc)
        per_path = []
        for p, q in zip(moved.paths, doc.paths):
            per_path.append(chamfer_brute(PathPointCloud.from_path(p).points, PathPointCloud.from_path(q).points))
        assert got == pytest.approx(np.mean(per_path), abs=1e-9)

    def test_scale_invariant_to_viewbox(self):
        small = SvgDoc((0, 0, 64, 64), (square("a", 8, 8, 16),))
        big = SvgDoc((0, 0, 512, 512), (square("a", 64, 64, 128),))
        assert path_irregularity(small, big) == pytest.approx(0, abs=1e-9)

    def test_color_aware(self):
        blue = ColorRGBA(0, 0, 255)
        truth = SvgDoc((0, 0, 512, 512), (square("r", 0, 0, 50), square("b", 200, 200, 50, blue)))
        gen = SvgDoc((0, 0, 512, 512), (square("x", 0, 0, 50, blue),))
        assert path_irregularity(gen, truth) == 0
        assert path_irregularity(gen, truth, color_aware=True) > 100

    def test_empty(self):
        with pytest.raises(EmptyDocument):
            path_irregularity(SvgDoc((0, 0, 1, 1), ()), random_doc(0))


class TestMse:
    def test_extremes(self):
        black = RasterImage.filled(4, 4, ColorRGBA(0, 0, 0))
        white = RasterImage.filled(4, 4, ColorRGBA(255, 255, 255))
        assert mse(black, black) == 0 and mse(black, white) == 1.0

    def test_one_pixel(self):
        a = RasterImage.filled(2, 2, ColorRGBA(255, 255, 255))
        px = a.pixels.copy()
        px[0, 0, :3] = 0
        assert mse(a, RasterImage(px)) == 0.25

    def test_shape(self):
        with pytest.raises(DimensionMismatch):
            mse(RasterImage.filled(2, 2), RasterImage.filled(3, 2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_range_and_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = (RasterImage(rng.integers(0, 256, (5, 6, 4), dtype=np.uint8)) for _ in range(2))
        assert 0 <= mse(a, b) <= 1 and mse(a, b) == mse(b, a)


class TestDrop:
    @pytest.mark.parametrize("n,removed", [(10, 3), (3, 1), (1, 0), (5, 2), (15, 5)])
    def test_counts(self, n, removed):
        doc = SvgDoc((0, 0, 512, 512), tuple(square(f"p{k}", k, k, 5) for k in range(n)))
        assert drop_count(n, 0.3) == removed
        assert len(drop_paths(doc, 0.3, seed=1).paths) == n - removed

    def test_deterministic_order_preserving(self):
        doc = SvgDoc((0, 0, 512, 512), tuple(square(f"p{k}", k, k, 5) for k in range(20)))
        a, b = drop_paths(doc, 0.3, 9), drop_paths(doc, 0.3, 9)
        assert a.path_ids == b.path_ids
        order = list(doc.path_ids)
        assert [order.index(i) for i in a.path_ids] == sorted(order.index(i) for i in a.path_ids)

    def test_control_and_bounds(self):
        doc = random_doc(1)
        assert drop_paths(doc, 0.0).path_ids == doc.path_ids
        with pytest.raises(ValueError):
            drop_paths(doc, 1.0)
        with pytest.raises(EmptyDocument):
            drop_paths(SvgDoc((0, 0, 1, 1), ()))


class TestSemantics:
    def test_constant_service(self):
        class Flat:
            def similarity(self, caption, image):
                return 0.3

        assert semantics_drop(random_doc(2), "shapes", Flat()) == 0

    def test_counts_ink(self):
        class Ink:
            def similarity(self, caption, image):
                return float((image.pixels[..., :3] < 255).any(axis=2).mean())

        assert semantics_drop(random_doc(3, min_paths=10), "shapes", Ink(), trials=4, resolution=64) >= 0

    def test_no_service(self):
        with pytest.raises(ServiceUnavailable):
            semantics_drop(random_doc(0), "x", None)


def test_results_tables(tmp_path):
    rows = [MetricsRow("a", 0.1, 2.0, 0.5, None), MetricsRow("b", 0.3, 4.0, None, None)]
    mean = aggregate(rows)
    assert mean.values() == (pytest.approx(0.2), 3.0, 0.5, None)
    write_results(rows + [mean], tmp_path / "m.csv", tmp_path / "m.json")
    with open(tmp_path / "m.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["name", *COLUMNS]
    assert table[2] == ["b", "0.3", "4.0", "", ""]
    data = json.loads((tmp_path / "m.json").read_text())
    assert data[0]["Path Irregularity"] == 2.0 and data[1]["MSE"] is None
