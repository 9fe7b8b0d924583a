import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from canopy_align.canopy_raster import (BinaryImage, dilate, erode,
                                        make_canopy_image, median_filter,
                                        rasterize, select_canopy)
from canopy_align.config import CanopyHeightMode, PlotConfig
from canopy_align.errors import EmptyCanopy
from canopy_align.geometry import Label, Plane, PointCloud
from canopy_align.ground_alignment import LeveledCloud

from oracles import brute_dilate, brute_erode, brute_median

small_bits = arrays(np.uint8, (16, 16), elements=st.integers(0, 1))


def leveled_from_points(points, labels=None, ground_z=0.0):
    cloud = PointCloud(points, labels)
    plane = Plane.from_coeffs(0, 0, 1, -ground_z)
    return LeveledCloud(cloud=cloud, leveling=np.eye(3),
                        plane_before=plane, plane_after=plane)


def image_of(bits):
    bits = np.asarray(bits, dtype=np.uint8)
    return BinaryImage(bits.shape[1], bits.shape[0], 0.0, 0.0, 0.1, bits)


class TestSelectCanopy:
    def test_fixed_threshold_is_strict(self):
        pts = [[0, 0, 1.0], [1, 0, 2.9], [2, 0, 3.1], [3, 0, 15.0]]
        leveled = leveled_from_points(pts)
        kept = select_canopy(leveled, CanopyHeightMode.fixed(3.0))
        assert sorted(kept.points[:, 2]) == [3.1, 15.0]

    def test_three_quarters_cutoff(self):
        pts = [[0, 0, 0.0], [1, 0, 14.9], [2, 0, 15.1], [3, 0, 20.0]]
        leveled = leveled_from_points(pts)
        kept = select_canopy(leveled, CanopyHeightMode.three_quarters())
        assert sorted(kept.points[:, 2]) == [15.1, 20.0]

    def test_empty_canopy(self):
        leveled = leveled_from_points([[0, 0, 0.5], [1, 1, 1.0]])
        with pytest.raises(EmptyCanopy):
            select_canopy(leveled, CanopyHeightMode.fixed(3.0))

    def test_ground_labels_excluded(self):
        pts = [[0, 0, 5.0], [1, 0, 5.0]]
        labels = [Label.GROUND, Label.VEGETATION]
        leveled = leveled_from_points(pts, labels)
        kept = select_canopy(leveled, CanopyHeightMode.fixed(3.0))
        assert len(kept) == 1


class TestRasterize:
    def test_single_point_center_pixel(self):
        img = rasterize(PointCloud([[5.0, 7.0, 0.0]]), 0.1)
        assert (img.width, img.height) == (3, 3)
        assert img.bits.sum() == 1
        assert img.bits[1, 1] == 1

    def test_two_points_quarter_meter_apart(self):
        for phase in (0.0, 0.03, 0.07):
            pts = [[phase, 0.0, 0.0], [phase + 0.25, 0.0, 0.0]]
            img = rasterize(PointCloud(pts), 0.1)
            set_u = np.nonzero(img.bits.any(axis=0))[0]
            assert img.bits.sum() == 2
            assert set_u[1] - set_u[0] in (2, 3)

    def test_direct_binning_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 3, (500, 3))
        res = 0.1
        img = rasterize(PointCloud(pts), res)
        for x, y, _ in pts:
            u = int(np.floor((x - img.origin_x) / res))
            v = int(np.floor((y - img.origin_y) / res))
            assert img.bits[v, u] == 1
        # count of set pixels equals count of distinct occupied cells
        cells = {(int(np.floor((x - img.origin_x) / res)),
                  int(np.floor((y - img.origin_y) / res)))
                 for x, y, _ in pts}
        assert img.bits.sum() == len(cells)

    def test_plot_sized_image(self):
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.uniform(0, 40, 1_000_000),
                               rng.uniform(0, 32, 1_000_000),
                               np.zeros(1_000_000)])
        img = rasterize(PointCloud(pts), 0.1)
        assert abs(img.width - 402) <= 2
        assert abs(img.height - 322) <= 2

    def test_georeferencing_round_trip(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-4, 9, (300, 3))
        img = rasterize(PointCloud(pts), 0.25)
        u, v = img.world_to_pixel(pts[:, 0], pts[:, 1])
        x, y = img.pixel_to_world(u, v)
        assert np.abs(x - pts[:, 0]).max() <= 0.125 + 1e-12
        assert np.abs(y - pts[:, 1]).max() <= 0.125 + 1e-12


class TestMorphology:
    def test_dilate_single_pixel(self):
        bits = np.zeros((9, 9), np.uint8)
        bits[4, 4] = 1
        out = dilate(image_of(bits), 5)
        assert out.bits.sum() == 25
        assert np.all(out.bits[2:7, 2:7] == 1)

    def test_dilate_clips_at_border(self):
        bits = np.zeros((5, 5), np.uint8)
        bits[0, 0] = 1
        out = dilate(image_of(bits), 5)
        assert out.bits.sum() == 9

    def test_erode_empty_is_empty(self):
        out = erode(image_of(np.zeros((8, 8), np.uint8)), 3)
        assert out.bits.sum() == 0

    def test_closing_fills_small_hole(self):
        bits = np.ones((20, 20), np.uint8)
        bits[10, 10] = 0
        closed = erode(dilate(image_of(bits), 5), 5)
        assert closed.bits[10, 10] == 1

    @settings(max_examples=60, deadline=None)
    @given(small_bits, st.sampled_from([1, 3, 5]))
    def test_matches_brute_force(self, bits, kernel):
        img = image_of(bits)
        assert np.array_equal(dilate(img, kernel).bits,
                              brute_dilate(bits, kernel))
        assert np.array_equal(erode(img, kernel).bits,
                              brute_erode(bits, kernel))
        assert np.array_equal(median_filter(img, kernel).bits,
                              brute_median(bits, kernel))

    @settings(max_examples=40, deadline=None)
    @given(small_bits, st.sampled_from([3, 5]))
    def test_duality_on_interior(self, bits, kernel):
        img = image_of(bits)
        eroded = erode(img, kernel).bits
        flipped = image_of(1 - bits)
        dual = 1 - dilate(flipped, kernel).bits
        r = kernel // 2
        assert np.array_equal(eroded[r:-r, r:-r], dual[r:-r, r:-r])

    @settings(max_examples=40, deadline=None)
    @given(small_bits, st.sampled_from([3, 5]))
    def test_closing_never_shrinks(self, bits, kernel):
        img = image_of(bits)
        closed = erode(dilate(img, kernel), kernel)
        assert closed.bits.sum() >= bits.sum()

    def test_median_removes_isolated_pixel(self):
        bits = np.zeros((11, 11), np.uint8)
        bits[5, 5] = 1
        assert median_filter(image_of(bits), 5).bits.sum() == 0

    def test_median_keeps_solid_interior(self):
        bits = np.zeros((30, 30), np.uint8)
        bits[5:25, 5:25] = 1
        out = median_filter(image_of(bits), 5)
        assert np.all(out.bits[7:23, 7:23] == 1)

    def test_median_random_against_oracle(self):
        rng = np.random.default_rng(3)
        bits = (rng.random((64, 64)) < 0.4).astype(np.uint8)
        assert np.array_equal(median_filter(image_of(bits), 5).bits,
                              brute_median(bits, 5))

    def test_georeferencing_unchanged(self):
        img = rasterize(PointCloud([[1.0, 2.0, 0.0], [3.0, 4.0, 0.0]]), 0.5)
        out = median_filter(erode(dilate(img, 3), 3), 3)
        assert (out.origin_x, out.origin_y, out.resolution) == \
            (img.origin_x, img.origin_y, img.resolution)


class TestMakeCanopyImage:
    def test_deterministic(self, small_plot, default_cfg):
        from canopy_align.ground_filter import classify_ground
        from canopy_align.ground_alignment import fit_and_level
        leveled = fit_and_level(classify_ground(small_plot.uls, default_cfg),
                                default_cfg)
        a = make_canopy_image(leveled, default_cfg)
        b = make_canopy_image(leveled, default_cfg)
        assert np.array_equal(a.bits, b.bits)

    def test_all_ground_raises(self, default_cfg):
        pts = np.column_stack([np.random.default_rng(4).uniform(0, 10, (400, 2)),
                               np.zeros(400)])
        leveled = leveled_from_points(pts)
        with pytest.raises(EmptyCanopy):
            make_canopy_image(leveled, default_cfg)

    def test_pair_counts_similar(self, small_plot, default_cfg):
        from canopy_align.ground_filter import classify_ground
        from canopy_align.ground_alignment import fit_and_level
        from canopy_align.geometry import apply
        # overlay the ground cloud on the aerial frame before comparing
        ground_world = apply(small_plot.truth, small_plot.ground)
        images = []
        for cloud in (small_plot.uls, ground_world):
            leveled = fit_and_level(classify_ground(cloud, default_cfg),
                                    default_cfg)
            images.append(make_canopy_image(leveled, default_cfg))
        counts = [img.count_set() for img in images]
        assert abs(counts[0] - counts[1]) / max(counts) < 0.20
