import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from canopy_align.canopy_raster import BinaryImage, dilate, median_filter, rasterize
from canopy_align.config import PlotConfig
from canopy_align.errors import (MatchRejected, NoCandidates, NoKeypoints,
                                 NoPairs)
from canopy_align.geometry import PointCloud
from canopy_align.matcher import (Assignment, ContourMap, Keypoint,
                                  MatchHypothesis, TwoPointPair, build_pairs,
                                  detect_contours, find_correspondences,
                                  grid_cell_centers, hypothesis_transform,
                                  keypoints, match_images, overlap)

from oracles import (brute_contour_classes, brute_corner_response,
                     brute_correspondences, brute_grid_centers, brute_overlap)


def image_of(bits, res=0.1):
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    return BinaryImage(bits.shape[1], bits.shape[0], 0.0, 0.0, res, bits)


def blob_image(seed, size=120, n_blobs=8, radius=(4, 11)):
    """Random union-of-disks test image, cleaned like the real pipeline."""
    rng = np.random.default_rng(seed)
    uu, vv = np.meshgrid(np.arange(size), np.arange(size))
    bits = np.zeros((size, size), np.uint8)
    for _ in range(n_blobs):
        cu, cv = rng.uniform(15, size - 15, 2)
        r = rng.uniform(*radius)
        bits |= ((uu - cu) ** 2 + (vv - cv) ** 2 < r * r).astype(np.uint8)
    return image_of(bits)


class TestDetectContours:
    def test_isolated_pixel_is_outlier(self):
        bits = np.zeros((5, 5), np.uint8)
        bits[2, 2] = 1
        cm = detect_contours(image_of(bits))
        assert cm.outlier[2, 2]
        assert cm.contour.sum() == 0

    def test_solid_block_partition(self):
        bits = np.zeros((9, 9), np.uint8)
        bits[2:7, 2:7] = 1
        cm = detect_contours(image_of(bits))
        assert cm.interior.sum() == 9
        assert np.all(cm.interior[3:6, 3:6])
        assert cm.contour.sum() == 16

    def test_empty_image(self):
        cm = detect_contours(image_of(np.zeros((4, 4), np.uint8)))
        assert cm.contour_pixels().size == 0

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, (12, 12), elements=st.integers(0, 1)))
    def test_matches_brute_force_and_partitions(self, bits):
        cm = detect_contours(image_of(bits))
        outlier, interior, contour = brute_contour_classes(bits)
        assert np.array_equal(cm.outlier, outlier)
        assert np.array_equal(cm.interior, interior)
        assert np.array_equal(cm.contour, contour)
        combined = cm.outlier | cm.interior | cm.contour
        assert np.array_equal(combined, bits.astype(bool))
        assert not np.any(cm.outlier & cm.interior)
        assert not np.any(cm.outlier & cm.contour)
        assert not np.any(cm.interior & cm.contour)


class TestKeypoints:
    def test_straight_edge_rejected(self, default_cfg):
        bits = np.zeros((20, 40), np.uint8)
        bits[:10, :] = 1  # long horizontal canopy edge
        img = image_of(bits)
        cm = detect_contours(img)
        responses, valid = _responses(img, cm, default_cfg)
        # far from the image border the edge is flat: response <= 0
        assert responses[9, 20] <= 0.0

    def test_corner_beats_mid_edge(self, default_cfg):
        bits = np.zeros((40, 40), np.uint8)
        bits[5:25, 5:25] = 1
        bits[15:25, 15:25] = 0  # L-shaped canopy with an inner right angle
        img = image_of(bits)
        cm = detect_contours(img)
        responses, _ = _responses(img, cm, default_cfg)
        corner = responses[15, 14]   # contour pixel at the inner corner
        mid_edge = responses[15, 5]  # middle of a straight side
        oracle_corner = brute_corner_response(cm.contour, 14, 15,
                                              default_cfg.keypoint_radius,
                                              default_cfg.harris_alpha)
        assert corner == pytest.approx(oracle_corner, abs=1e-9)
        assert corner > 0 > mid_edge
        assert corner > 5 * mid_edge

    def test_single_sample_skipped(self, default_cfg):
        contour = np.zeros((30, 30), dtype=bool)
        contour[15, 15] = True  # lone contour pixel: covariance undefined
        cm = ContourMap(outlier=np.zeros_like(contour),
                        interior=np.zeros_like(contour), contour=contour)
        with pytest.raises(NoKeypoints):
            keypoints(image_of(np.zeros((30, 30), np.uint8)), cm, default_cfg)

    def test_responses_match_brute_force(self, default_cfg):
        img = blob_image(0)
        cm = detect_contours(img)
        for kp in keypoints(img, cm, default_cfg)[:20]:
            oracle = brute_corner_response(cm.contour, kp.u, kp.v,
                                           default_cfg.keypoint_radius,
                                           default_cfg.harris_alpha)
            assert kp.response == pytest.approx(oracle, rel=1e-9, abs=1e-12)

    def test_nms_spacing_and_cap(self, default_cfg):
        img = blob_image(1)
        kps = keypoints(img, detect_contours(img), default_cfg)
        assert len(kps) <= default_cfg.keypoint_max_count
        coords = np.array([[k.u, k.v] for k in kps], float)
        for i in range(len(coords)):
            d = np.hypot(*(coords[np.arange(len(coords)) != i] - coords[i]).T)
            assert d.min() >= default_cfg.keypoint_nms_radius

    def test_translation_invariance(self, default_cfg):
        img = blob_image(2, size=90)
        big_a = np.zeros((160, 160), np.uint8)
        big_b = np.zeros((160, 160), np.uint8)
        big_a[10:100, 10:100] = img.bits
        big_b[40:130, 55:145] = img.bits
        kp_a = keypoints(image_of(big_a), detect_contours(image_of(big_a)),
                         default_cfg)
        kp_b = keypoints(image_of(big_b), detect_contours(image_of(big_b)),
                         default_cfg)
        set_a = {(k.u, k.v, k.response) for k in kp_a}
        set_b = {(k.u - 45, k.v - 30, k.response) for k in kp_b}
        assert set_a == set_b

    def test_rotation_90_invariance(self, default_cfg):
        img = blob_image(3, size=100)
        rotated = image_of(np.rot90(img.bits).copy())
        kp = keypoints(img, detect_contours(img), default_cfg)
        kp_rot = keypoints(rotated, detect_contours(rotated), default_cfg)
        # rot90 maps (u, v) -> (v, size-1-u) in our (col, row) convention
        size = img.bits.shape[1]
        mapped = {(k.v, size - 1 - k.u): k.response for k in kp}
        direct = {(k.u, k.v): k.response for k in kp_rot}
        assert set(mapped) == set(direct)
        for key, resp in mapped.items():
            assert direct[key] == pytest.approx(resp, rel=1e-9, abs=1e-9)


def _responses(img, cm, cfg):
    from canopy_align.matcher import _contour_responses
    return _contour_responses(cm.contour, cfg)


class TestBuildPairs:
    def kp(self, u, v, r=1.0):
        return Keypoint(u, v, r)

    def test_single_valid_pair(self):
        pairs = build_pairs([self.kp(0, 0), self.kp(10, 0)], 5.0, 100)
        assert len(pairs) == 1
        assert pairs[0].dist == 10.0

    def test_below_separation_rejected(self):
        with pytest.raises(NoPairs):
            build_pairs([self.kp(0, 0), self.kp(4, 0)], 5.0, 100)

    def test_exhaustive_count(self):
        rng = np.random.default_rng(0)
        pts = [self.kp(int(u), int(v), float(r))
               for u, v, r in rng.uniform(0, 100, (40, 3))]
        lam = 20.0
        pairs = build_pairs(pts, lam, 10**9)
        expected = 0
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                d = math.hypot(pts[i].u - pts[j].u, pts[i].v - pts[j].v)
                if d > lam:
                    expected += 1
        assert len(pairs) == expected

    def test_cap_prefers_strong_responses(self):
        pts = [self.kp(0, 0, 10.0), self.kp(20, 0, 9.0),
               self.kp(0, 20, 0.1), self.kp(20, 20, 0.2)]
        pairs = build_pairs(pts, 5.0, 1)
        assert {pairs[0].a.response, pairs[0].b.response} == {10.0, 9.0}

    def test_max_separation(self):
        pts = [self.kp(0, 0), self.kp(10, 0), self.kp(200, 0)]
        pairs = build_pairs(pts, 5.0, 100, max_separation=50.0)
        assert all(p.dist <= 50.0 for p in pairs)
        assert len(pairs) == 1


class TestFindCorrespondences:
    def pair(self, d):
        return TwoPointPair(Keypoint(0, 0, 1.0), Keypoint(int(d), 0, 1.0),
                            float(d))

    def test_within_tolerance(self):
        found = find_correspondences([self.pair(30)], [self.pair(32)], 5.0)
        assert len(found) == 1

    def test_outside_tolerance(self):
        with pytest.raises(NoCandidates):
            find_correspondences([self.pair(30)], [self.pair(36)], 5.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_set_equals_double_loop(self, seed):
        rng = np.random.default_rng(seed)
        n_ref, n_mat = rng.integers(1, 30, 2)
        d_ref = rng.uniform(5, 80, n_ref)
        d_mat = rng.uniform(5, 80, n_mat)
        mu = float(rng.uniform(0.5, 8))
        pairs_ref = [TwoPointPair(Keypoint(i, 0, 1.0), Keypoint(i, 1, 1.0),
                                  float(d)) for i, d in enumerate(d_ref)]
        pairs_mat = [TwoPointPair(Keypoint(j, 2, 1.0), Keypoint(j, 3, 1.0),
                                  float(d)) for j, d in enumerate(d_mat)]
        found = find_correspondences(pairs_ref, pairs_mat, mu)
        got = {(a.a.u, b.a.u) for a, b in found}
        assert got == brute_correspondences(d_ref, d_mat, mu)


class TestHypothesisTransform:
    def pair_from(self, a, b):
        return TwoPointPair(Keypoint(*a, 1.0), Keypoint(*b, 1.0),
                            math.hypot(b[0] - a[0], b[1] - a[1]))

    def test_identical_pairs_direct(self):
        p = self.pair_from((3, 4), (10, 12))
        theta, t = hypothesis_transform(p, p, Assignment.DIRECT)
        assert theta == 0.0
        assert np.allclose(t, 0.0)

    def test_quarter_turn_about_origin(self):
        matched = self.pair_from((4, 0), (10, 0))
        ref = self.pair_from((0, 4), (0, 10))  # matched rotated +90 deg
        theta, t = hypothesis_transform(ref, matched, Assignment.DIRECT)
        assert theta == pytest.approx(math.pi / 2)
        assert np.allclose(t, 0.0, atol=1e-12)

    def test_swapped_differs_by_pi(self):
        ref = self.pair_from((0, 0), (20, 0))
        matched = self.pair_from((5, 5), (25, 5))
        theta_d, _ = hypothesis_transform(ref, matched, Assignment.DIRECT)
        theta_s, _ = hypothesis_transform(ref, matched, Assignment.SWAPPED)
        diff = abs(theta_d - theta_s)
        assert min(diff, 2 * math.pi - diff) == pytest.approx(math.pi)

    def test_endpoints_map_exactly_for_equal_lengths(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.uniform(0, 50, 2)
            d = rng.uniform(10, 30)
            ang = rng.uniform(0, 2 * math.pi)
            b = a + d * np.array([math.cos(ang), math.sin(ang)])
            theta_true = rng.uniform(-math.pi, math.pi)
            shift = rng.uniform(-20, 20, 2)
            rot = np.array([[math.cos(theta_true), -math.sin(theta_true)],
                            [math.sin(theta_true), math.cos(theta_true)]])
            qa, qb = rot @ a + shift, rot @ b + shift
            ref = self.pair_from((qa[0], qa[1]), (qb[0], qb[1]))
            matched = self.pair_from((a[0], a[1]), (b[0], b[1]))
            theta, t = hypothesis_transform(ref, matched, Assignment.DIRECT)
            rot_est = np.array([[math.cos(theta), -math.sin(theta)],
                                [math.sin(theta), math.cos(theta)]])
            assert np.allclose(rot_est @ a + t, qa, atol=1e-9)
            assert np.allclose(rot_est @ b + t, qb, atol=1e-9)


class TestGridCenters:
    def test_all_ones(self):
        centers = grid_cell_centers(image_of(np.ones((20, 20), np.uint8)), 10)
        assert {tuple(c) for c in centers} == {(5, 5), (15, 5), (5, 15), (15, 15)}

    def test_all_zeros(self):
        centers = grid_cell_centers(image_of(np.zeros((20, 20), np.uint8)), 10)
        assert len(centers) == 0

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint8, (23, 31), elements=st.integers(0, 1)),
           st.sampled_from([4, 7, 10]))
    def test_matches_brute_force(self, bits, cell):
        centers = grid_cell_centers(image_of(bits), cell)
        assert {tuple(c) for c in centers} == brute_grid_centers(bits, cell)


class TestOverlap:
    def hyp(self, theta, tx, ty):
        return MatchHypothesis(theta=theta, t=np.array([tx, ty]),
                               assignment=Assignment.DIRECT, overlap=0.0)

    def test_self_overlap_is_one(self):
        img = blob_image(4)
        centers = grid_cell_centers(img, 10)
        assert overlap(self.hyp(0.0, 0.0, 0.0), img, img, centers) == 1.0

    def test_out_of_bounds_is_zero(self):
        img = blob_image(5)
        centers = grid_cell_centers(img, 10)
        assert overlap(self.hyp(0.0, 1e5, 1e5), img, img, centers) == 0.0

    def test_correct_beats_flipped(self):
        # asymmetric scene: rotating it by pi must lose overlap
        bits = np.zeros((80, 80), np.uint8)
        bits[10:30, 10:50] = 1
        bits[50:70, 55:70] = 1
        img = image_of(bits)
        centers = grid_cell_centers(img, 10)
        correct = overlap(self.hyp(0.0, 0.0, 0.0), img, img, centers)
        # flipped correspondence: half turn about the image center
        c = 79 / 2
        flipped = self.hyp(math.pi, 2 * c, 2 * c)
        wrong = overlap(flipped, img, img, centers)
        assert correct == 1.0
        assert correct > wrong

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_bitwise_equals_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        bits = (rng.random((40, 40)) < 0.3).astype(np.uint8)
        bits[5, 5] = 1  # ensure at least one canopy center candidate
        img = image_of(bits)
        centers = grid_cell_centers(img, 5)
        if len(centers) == 0:
            return
        theta = float(rng.uniform(-math.pi, math.pi))
        tx, ty = rng.uniform(-30, 30, 2)
        ours = overlap(self.hyp(theta, tx, ty), img, img, centers)
        assert ours == brute_overlap(theta, tx, ty, bits, centers)


class TestMatchImages:
    def test_self_match(self, default_cfg):
        img = blob_image(6)
        result = match_images(img, img, default_cfg)
        assert abs(result.best.theta) < 1e-6
        assert np.hypot(*result.best.t) < 0.5
        assert result.best.overlap >= 0.99

    def test_recovers_known_transform(self, default_cfg):
        rng = np.random.default_rng(7)
        pts = rng.uniform(2, 28, (4000, 2))
        keep = np.zeros(len(pts), dtype=bool)
        for _ in range(7):
            c = rng.uniform(5, 25, 2)
            r = rng.uniform(1.2, 3.0)
            keep |= np.hypot(*(pts - c).T) < r
        pts = pts[keep]
        theta_true = math.radians(35.0)
        rot = np.array([[math.cos(theta_true), -math.sin(theta_true)],
                        [math.sin(theta_true), math.cos(theta_true)]])
        shift = np.array([1.23, -0.77])
        moved = pts @ rot.T + shift

        def clean(xy):
            cloud = PointCloud(np.column_stack([xy, np.zeros(len(xy))]))
            img = rasterize(cloud, 0.1)
            return median_filter(dilate(img, 3), 3)

        ref, matched = clean(moved), clean(pts)
        result = match_images(ref, matched, default_cfg)
        assert result.best.overlap >= 0.9
        assert abs(math.degrees(result.best.theta) - 35.0) <= 1.0
        # expected pixel translation from the world transform and origins
        c_m = np.array([matched.origin_x, matched.origin_y]) + 0.05
        c_r = np.array([ref.origin_x, ref.origin_y]) + 0.05
        t_expected = (rot @ c_m + shift - c_r) / 0.1
        assert np.hypot(*(result.best.t - t_expected)) <= 2.0

    def test_unrelated_images_rejected(self, default_cfg):
        a = blob_image(8, n_blobs=4, radius=(3, 6))
        b = blob_image(9, n_blobs=4, radius=(3, 6))
        with pytest.raises(MatchRejected) as err:
            match_images(a, b, default_cfg)
        assert err.value.best_overlap < 0.5

    def test_best_is_argmax_of_evaluated(self, default_cfg):
        img = blob_image(10)
        rotated = image_of(np.rot90(img.bits).copy())
        result = match_images(img, rotated, default_cfg,
                              collect_candidates=True)
        scores = [c.overlap for c in result.candidates]
        assert result.best.overlap == max(scores)
        centers = grid_cell_centers(rotated, default_cfg.overlap_cell)
        for cand in result.candidates[:200]:
            hyp = MatchHypothesis(cand.theta, cand.t, cand.assignment, 0.0)
            assert overlap(hyp, rotated, img, centers) == cand.overlap

    def test_deterministic(self, default_cfg):
        img = blob_image(11)
        rotated = image_of(np.rot90(img.bits).copy())
        a = match_images(img, rotated, default_cfg)
        b = match_images(img, rotated, default_cfg)
        assert a.best == b.best or (
            a.best.theta == b.best.theta
            and np.array_equal(a.best.t, b.best.t)
            and a.best.overlap == b.best.overlap)
