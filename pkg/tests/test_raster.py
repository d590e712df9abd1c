import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from layerpeel.errors import DimensionMismatch
from layerpeel.occlusion import BitMask, coverage_mask, doc_masks, topmost_set
from layerpeel.raster import (
    DiffThreshold,
    RasterImage,
    composite_over,
    diff_mask,
    extract_region,
    is_blank,
    rasterize,
)
from layerpeel.svg_core import ColorRGBA, PathShape, SvgDoc, polygon_subpath
from layerpeel.synthetic import random_doc

from oracles import painter_render

RED, BLUE = ColorRGBA(255, 0, 0), ColorRGBA(0, 0, 255)


def rect(pid, x0, y0, x1, y1, fill=RED):
    return PathShape(pid, fill, "nonzero", (polygon_subpath([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]),))


def solid(h, w, rgb):
    px = np.empty((h, w, 4), np.uint8)
    px[..., :3] = rgb
    px[..., 3] = 255
    return RasterImage(px)


images = arrays(np.uint8, (6, 5, 3)).map(
    lambda a: RasterImage(np.concatenate([a, np.full((6, 5, 1), 255, np.uint8)], axis=2)))


class TestRasterize:
    def test_empty_doc_is_white(self):
        img = rasterize(SvgDoc((0, 0, 64, 64), ()), 64)
        assert img.shape == (64, 64) and (img.pixels == 255).all()

    def test_red_square_matches_coverage(self):
        sq = rect("r", 0, 0, 256, 512)
        img = rasterize(SvgDoc((0, 0, 512, 512), (sq,)))
        red = (img.pixels[..., :3] == (255, 0, 0)).all(axis=2)
        assert np.array_equal(red, coverage_mask(sq).bits)

    def test_full_occlusion(self):
        d = SvgDoc((0, 0, 512, 512), (rect("r", 10, 10, 100, 100), rect("b", 0, 0, 200, 200, BLUE)))
        img = rasterize(d)
        assert not (img.pixels[..., :3] == (255, 0, 0)).all(axis=2).any()

    @pytest.mark.parametrize("seed", range(5))
    def test_painter_order(self, seed):
        d = random_doc(seed, size=128)
        masks = [m.bits for m in doc_masks(d, 128)]
        assert np.array_equal(rasterize(d, 128).pixels, painter_render(d, masks, 128))

    def test_background(self):
        img = rasterize(SvgDoc((0, 0, 8, 8), ()), 8, background=ColorRGBA(1, 2, 3))
        assert tuple(img.pixels[0, 0]) == (1, 2, 3, 255)

    def test_antialias_only_blends_edges(self):
        d = SvgDoc((0, 0, 64, 64), (rect("r", 10.5, 10.5, 40.5, 40.5),))
        hard, soft = rasterize(d, 64), rasterize(d, 64, antialias=True)
        assert tuple(soft.pixels[20, 20]) == (255, 0, 0, 255)
        assert tuple(soft.pixels[0, 0]) == (255, 255, 255, 255)
        assert not np.array_equal(hard.pixels, soft.pixels)

    def test_png_round_trip(self, tmp_path):
        img = rasterize(random_doc(2, size=64), 64)
        img.save(tmp_path / "x.png")
        assert np.array_equal(RasterImage.load(tmp_path / "x.png").pixels, img.pixels)


class TestDiffMask:
    def test_identity_is_empty(self):
        img = rasterize(random_doc(4, size=64), 64)
        assert not diff_mask(img, img).any()

    def test_strict_threshold(self):
        a = solid(3, 3, (100, 100, 100))
        px = a.pixels.copy()
        px[1, 1, 0] = 120
        b = RasterImage(px)
        assert not diff_mask(a, b, DiffThreshold(20)).any()
        px[1, 1, 0] = 121
        assert diff_mask(a, RasterImage(px), 20).bits[1, 1]

    def test_alpha_ignored(self):
        a = solid(2, 2, (5, 5, 5))
        px = a.pixels.copy()
        px[..., 3] = 0
        assert not diff_mask(a, RasterImage(px)).any()

    def test_removing_red_square(self):
        sq = rect("r", 100, 120, 300, 200)
        before = rasterize(SvgDoc((0, 0, 512, 512), (sq,)))
        after = rasterize(SvgDoc((0, 0, 512, 512), ()))
        assert np.array_equal(diff_mask(before, after).bits, coverage_mask(sq).bits)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            diff_mask(solid(2, 2, (0, 0, 0)), solid(3, 2, (0, 0, 0)))

    def test_rho_range(self):
        with pytest.raises(ValueError):
            DiffThreshold(256)

    def test_closing_fills_pinholes(self):
        a, b = solid(9, 9, (255, 255, 255)), solid(9, 9, (255, 255, 255))
        px = b.pixels.copy()
        px[2:7, 2:7, :3] = 0
        px[4, 4, :3] = 255
        b = RasterImage(px)
        assert not diff_mask(a, b).bits[4, 4]
        assert diff_mask(a, b, closing=True).bits[4, 4]

    @settings(max_examples=60, deadline=None)
    @given(images, images, st.integers(0, 254))
    def test_symmetric_and_monotone_in_rho(self, a, b, rho):
        m = diff_mask(a, b, rho).bits
        assert np.array_equal(m, diff_mask(b, a, rho).bits)
        assert not (diff_mask(a, b, rho + 1).bits & ~m).any()
        ref = (np.abs(a.pixels[..., :3].astype(int) - b.pixels[..., :3].astype(int)).max(axis=2) > rho)
        assert np.array_equal(m, ref)


class TestExtract:
    def test_empty_mask(self):
        out = extract_region(solid(4, 4, (9, 9, 9)), BitMask.empty(4, 4))
        assert (out.pixels[..., 3] == 0).all()

    def test_full_mask(self):
        src = solid(4, 4, (9, 8, 7))
        out = extract_region(src, BitMask(np.ones((4, 4), bool)))
        assert np.array_equal(out.pixels, src.pixels)

    def test_two_colors_preserved(self):
        px = solid(6, 6, (255, 0, 0)).pixels.copy()
        px[:, 3:, :3] = (0, 0, 255)
        src = RasterImage(px)
        m = np.zeros((6, 6), bool)
        m[1:5, 1:5] = True
        out = extract_region(src, BitMask(m))
        assert np.array_equal(out.pixels[m], src.pixels[m])
        assert (out.pixels[~m] == 0).all()

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            extract_region(solid(4, 4, (0, 0, 0)), BitMask.empty(3, 4))


class TestBlank:
    def test_white(self):
        assert is_blank(solid(3, 3, (255, 255, 255)))

    def test_tolerance(self):
        px = solid(3, 3, (255, 255, 255)).pixels.copy()
        px[0, 0, 0] = 254
        assert not is_blank(RasterImage(px))
        assert is_blank(RasterImage(px), tolerance=2)


@pytest.mark.parametrize("seed", range(6))
def test_compositing_identity(seed):
    d = random_doc(seed, size=128)
    top = topmost_set(d, 128)
    full = rasterize(d, 128)
    rest = rasterize(d.without(top.ids), 128)
    m = diff_mask(full, rest)
    assert np.array_equal(composite_over(extract_region(full, m), rest).pixels, full.pixels)
