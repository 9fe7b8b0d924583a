"""Canopy binary-image matching.

Contour pixels are classified by 4-neighbor connectivity, corner
keypoints are scored with a covariance response over the local contour
geometry, and the two images are matched by congruent two-point sets:
every keypoint pair whose length matches a reference pair seeds a
planar rotation + translation hypothesis, and the hypothesis whose
transformed canopy cell centers land on the most reference canopy wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from ._kernels import score_hypotheses
from .canopy_raster import BinaryImage
from .config import PlotConfig
from .errors import (MatchRejected, NoCandidates, NoCanopyCells, NoKeypoints,
                     NoPairs)

_SCORE_CHUNK = 4096


@dataclass
class ContourMap:
    """Per-pixel classification of the set pixels of a binary image."""

    outlier: np.ndarray   # isolated set pixels (no set 4-neighbor)
    interior: np.ndarray  # all four neighbors set
    contour: np.ndarray   # at least one background 4-neighbor

    def contour_pixels(self) -> np.ndarray:
        """(n, 2) array of (u, v) contour coordinates, row-major order."""
        vu = np.argwhere(self.contour)
        return vu[:, ::-1].copy()


def detect_contours(img: BinaryImage) -> ContourMap:
    """Classify set pixels by the fraction of set 4-neighbors.

    Connectivity 0 marks an outlier, 1 an interior pixel, anything in
    between a contour pixel; out-of-bounds neighbors count as background.
    """
    bits = img.bits.astype(np.int8)
    neighbors = np.zeros_like(bits)
    neighbors[1:, :] += bits[:-1, :]
    neighbors[:-1, :] += bits[1:, :]
    neighbors[:, 1:] += bits[:, :-1]
    neighbors[:, :-1] += bits[:, 1:]
    is_set = bits == 1
    return ContourMap(outlier=is_set & (neighbors == 0),
                      interior=is_set & (neighbors == 4),
                      contour=is_set & (neighbors > 0) & (neighbors < 4))


@dataclass(frozen=True)
class Keypoint:
    u: int
    v: int
    response: float


def _disk_offsets(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    du, dv = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1))
    keep = du * du + dv * dv <= radius * radius
    return np.column_stack([du[keep], dv[keep]])


def _contour_responses(contour: np.ndarray, cfg: PlotConfig):
    """Covariance corner response at every contour pixel.

    The sample set of a pixel is the contour pixels within the keypoint
    radius; the 2x2 covariance of their coordinates (unbiased, 1/(n-1))
    gives response det - alpha * trace^2. Sums are taken in coordinates
    relative to the center pixel, which leaves the covariance unchanged
    and keeps the integer accumulations exact.
    """
    offsets = _disk_offsets(cfg.keypoint_radius)
    r = int(math.floor(cfg.keypoint_radius))
    size = 2 * r + 1

    def kernel(values: np.ndarray) -> np.ndarray:
        k = np.zeros((size, size))
        k[offsets[:, 1] + r, offsets[:, 0] + r] = values
        return k

    mask = contour.astype(np.float64)
    du = offsets[:, 0].astype(np.float64)
    dv = offsets[:, 1].astype(np.float64)
    sums = [ndimage.correlate(mask, kernel(w), mode="constant", cval=0.0)
            for w in (np.ones(len(offsets)), du, dv, du * du, dv * dv, du * dv)]
    n, su, sv, suu, svv, suv = sums

    valid = contour & (n >= 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        var_u = (suu - su * su / n) / (n - 1)
        var_v = (svv - sv * sv / n) / (n - 1)
        cov_uv = (suv - su * sv / n) / (n - 1)
        det = var_u * var_v - cov_uv * cov_uv
        trace = var_u + var_v
        response = det - cfg.harris_alpha * trace * trace
    response[~valid] = -np.inf
    return response, valid


def keypoints(img: BinaryImage, contours: ContourMap,
              cfg: PlotConfig) -> list[Keypoint]:
    """Corner keypoints: threshold on the covariance response, then
    non-maximum suppression, then a global cap on the keypoint count."""
    response, valid = _contour_responses(contours.contour, cfg)
    if not np.any(valid):
        raise NoKeypoints("image has no contour pixel with a valid response")
    max_response = float(response[valid].max())
    if max_response <= 0.0:
        raise NoKeypoints("no contour response above zero")
    threshold = cfg.keypoint_rel_threshold * max_response

    vs, us = np.nonzero(valid & (response > threshold))
    scores = response[vs, us]
    order = np.lexsort((us, vs, -scores))
    us, vs, scores = us[order], vs[order], scores[order]

    nms_sq = cfg.keypoint_nms_radius * cfg.keypoint_nms_radius
    kept_u: list[int] = []
    kept_v: list[int] = []
    kept: list[Keypoint] = []
    for u, v, score in zip(us, vs, scores):
        if kept_u:
            d2 = (np.array(kept_u) - u) ** 2 + (np.array(kept_v) - v) ** 2
            if d2.min() < nms_sq:
                continue
        kept_u.append(int(u))
        kept_v.append(int(v))
        kept.append(Keypoint(int(u), int(v), float(score)))
        if len(kept) >= cfg.keypoint_max_count:
            break
    return kept


@dataclass(frozen=True)
class TwoPointPair:
    a: Keypoint
    b: Keypoint
    dist: float


def build_pairs(points: list[Keypoint], min_separation: float, cap: int,
                max_separation: float | None = None) -> list[TwoPointPair]:
    """All unordered keypoint pairs farther apart than `min_separation`
    (and no farther than `max_separation` when given), truncated to `cap`
    by descending min(response), then descending distance."""
    if len(points) < 2:
        raise NoPairs(f"need >= 2 keypoints, got {len(points)}")
    coords = np.array([[p.u, p.v] for p in points], dtype=np.float64)
    resp = np.array([p.response for p in points])
    ia, ib = np.triu_indices(len(points), k=1)
    diff = coords[ia] - coords[ib]
    dist = np.hypot(diff[:, 0], diff[:, 1])
    keep = dist > min_separation
    if max_separation is not None:
        keep &= dist <= max_separation
    ia, ib, dist = ia[keep], ib[keep], dist[keep]
    if len(ia) == 0:
        raise NoPairs("no keypoint pair satisfies the separation constraints")
    min_resp = np.minimum(resp[ia], resp[ib])
    order = np.lexsort((ib, ia, -dist, -min_resp))[:cap]
    return [TwoPointPair(points[i], points[j], float(d))
            for i, j, d in zip(ia[order], ib[order], dist[order])]


def _congruent_indices(d_ref: np.ndarray, d_matched: np.ndarray,
                       tolerance: float):
    """Index pairs (i, j) with |d_matched[j] - d_ref[i]| < tolerance."""
    order = np.argsort(d_matched, kind="stable")
    sorted_d = d_matched[order]
    lo = np.searchsorted(sorted_d, d_ref - tolerance, side="left")
    hi = np.searchsorted(sorted_d, d_ref + tolerance, side="right")
    counts = hi - lo
    i_idx = np.repeat(np.arange(len(d_ref)), counts)
    if len(i_idx) == 0:
        return i_idx, i_idx
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    offsets = np.arange(len(i_idx)) - np.repeat(starts, counts)
    j_idx = order[np.repeat(lo, counts) + offsets]
    exact = np.abs(d_matched[j_idx] - d_ref[i_idx]) < tolerance
    return i_idx[exact], j_idx[exact]


def find_correspondences(pairs_ref: list[TwoPointPair],
                         pairs_matched: list[TwoPointPair],
                         tolerance: float):
    """All (reference pair, matched pair) combinations whose lengths
    differ by less than `tolerance`, ordered by pair-list indices."""
    if not pairs_ref or not pairs_matched:
        raise NoCandidates("empty pair list")
    d_ref = np.array([p.dist for p in pairs_ref])
    d_matched = np.array([p.dist for p in pairs_matched])
    i_idx, j_idx = _congruent_indices(d_ref, d_matched, tolerance)
    if len(i_idx) == 0:
        raise NoCandidates("no congruent two-point pairs within tolerance")
    order = np.lexsort((j_idx, i_idx))
    return [(pairs_ref[i], pairs_matched[j])
            for i, j in zip(i_idx[order], j_idx[order])]


class Assignment(Enum):
    DIRECT = "direct"
    SWAPPED = "swapped"


@dataclass(frozen=True)
class MatchHypothesis:
    theta: float            # counterclockwise, radians
    t: np.ndarray           # translation in reference-image pixels
    assignment: Assignment
    overlap: float


def hypothesis_transform(ref_pair: TwoPointPair, matched_pair: TwoPointPair,
                         assignment: Assignment):
    """Planar rotation + translation mapping the matched pair onto the
    reference pair under the given endpoint assignment.

    theta aligns the pair direction vectors; t anchors the matched
    pair's first endpoint onto its assigned reference endpoint (exact
    when the two pair lengths are equal).
    """
    q1 = np.array([ref_pair.a.u, ref_pair.a.v], dtype=np.float64)
    q2 = np.array([ref_pair.b.u, ref_pair.b.v], dtype=np.float64)
    p1 = np.array([matched_pair.a.u, matched_pair.a.v], dtype=np.float64)
    p2 = np.array([matched_pair.b.u, matched_pair.b.v], dtype=np.float64)
    if assignment is Assignment.DIRECT:
        qa, qb = q1, q2
    else:
        qa, qb = q2, q1
    theta = (math.atan2(qb[1] - qa[1], qb[0] - qa[0])
             - math.atan2(p2[1] - p1[1], p2[0] - p1[0]))
    theta = math.atan2(math.sin(theta), math.cos(theta))
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    t = np.array([qa[0] - (cos_t * p1[0] - sin_t * p1[1]),
                  qa[1] - (sin_t * p1[0] + cos_t * p1[1])])
    return theta, t


def grid_cell_centers(img: BinaryImage, cell: int) -> np.ndarray:
    """(n, 2) centers (u, v) of cell x cell blocks whose center pixel is
    canopy; blocks are anchored at pixel (0, 0)."""
    us = np.arange(cell // 2, img.width, cell)
    vs = np.arange(cell // 2, img.height, cell)
    uu, vv = np.meshgrid(us, vs)
    uu, vv = uu.ravel(), vv.ravel()
    on = img.bits[vv, uu] == 1
    return np.column_stack([uu[on], vv[on]]).astype(np.int64)


def overlap(hypothesis: MatchHypothesis, matched_img: BinaryImage,
            ref_img: BinaryImage, centers: np.ndarray) -> float:
    """Fraction of matched canopy cell centers that land on reference
    canopy after the hypothesis transform (nearest-pixel sampling,
    out-of-bounds reads as background)."""
    n = len(centers)
    if n == 0:
        raise NoCanopyCells("overlap grid holds no canopy cell centers")
    cos_t = np.cos(hypothesis.theta)
    sin_t = np.sin(hypothesis.theta)
    px = centers[:, 0].astype(np.float64)
    py = centers[:, 1].astype(np.float64)
    qx = cos_t * px - sin_t * py + hypothesis.t[0]
    qy = sin_t * px + cos_t * py + hypothesis.t[1]
    u = np.floor(qx + 0.5).astype(np.int64)
    v = np.floor(qy + 0.5).astype(np.int64)
    inside = (u >= 0) & (u < ref_img.width) & (v >= 0) & (v < ref_img.height)
    vals = ref_img.bits[v.clip(0, ref_img.height - 1),
                        u.clip(0, ref_img.width - 1)] * inside
    misses = n - int(vals.sum())
    return 1.0 - misses / n


@dataclass
class CandidateScore:
    d_ref: float
    d_matched: float
    assignment: Assignment
    theta: float
    t: np.ndarray
    overlap: float


@dataclass
class ImageMatch:
    best: MatchHypothesis
    corr_matched: np.ndarray    # midpoint of the winning matched pair (px)
    corr_reference: np.ndarray  # midpoint of the winning reference pair (px)
    n_keypoints_ref: int
    n_keypoints_matched: int
    n_candidates: int           # candidate pairs available
    n_evaluated: int            # hypothesis rows actually scored
    candidates: list[CandidateScore] | None = None


def match_images(ref_img: BinaryImage, matched_img: BinaryImage,
                 cfg: PlotConfig, collect_candidates: bool = False) -> ImageMatch:
    """Find the planar transform from matched-image pixels to
    reference-image pixels with the maximum canopy overlap.

    Candidates are scored in descending reference-pair-distance order
    (long pairs constrain the rotation best) with both endpoint
    assignments per candidate; scoring stops early once the overlap
    reaches the configured early-exit value. Ties keep the earliest
    candidate in that order.
    """
    kp_ref = keypoints(ref_img, detect_contours(ref_img), cfg)
    kp_matched = keypoints(matched_img, detect_contours(matched_img), cfg)
    max_separation = 0.5 * matched_img.width
    pairs_ref = build_pairs(kp_ref, cfg.pair_min_separation, cfg.pair_cap,
                            max_separation)
    pairs_matched = build_pairs(kp_matched, cfg.pair_min_separation,
                                cfg.pair_cap, max_separation)

    d_ref = np.array([p.dist for p in pairs_ref])
    d_matched = np.array([p.dist for p in pairs_matched])
    i_idx, j_idx = _congruent_indices(d_ref, d_matched,
                                      cfg.congruence_tolerance)
    if len(i_idx) == 0:
        raise NoCandidates("no congruent two-point pairs within tolerance")
    order = np.lexsort((j_idx, i_idx, -d_matched[j_idx], -d_ref[i_idx]))
    i_idx, j_idx = i_idx[order][:cfg.max_candidates], j_idx[order][:cfg.max_candidates]
    n_candidates = len(i_idx)

    centers = grid_cell_centers(matched_img, cfg.overlap_cell)
    if len(centers) == 0:
        raise NoCanopyCells("matched image has no canopy cell centers")

    ref_a = np.array([[p.a.u, p.a.v] for p in pairs_ref], dtype=np.float64)
    ref_b = np.array([[p.b.u, p.b.v] for p in pairs_ref], dtype=np.float64)
    mat_a = np.array([[p.a.u, p.a.v] for p in pairs_matched], dtype=np.float64)
    mat_b = np.array([[p.b.u, p.b.v] for p in pairs_matched], dtype=np.float64)
    ang_ref = np.arctan2(ref_b[:, 1] - ref_a[:, 1], ref_b[:, 0] - ref_a[:, 0])
    ang_mat = np.arctan2(mat_b[:, 1] - mat_a[:, 1], mat_b[:, 0] - mat_a[:, 0])

    # Hypothesis rows: direct assignment then swapped, per candidate.
    rows = 2 * n_candidates
    theta = np.empty(rows)
    theta[0::2] = ang_ref[i_idx] - ang_mat[j_idx]
    theta[1::2] = ang_ref[i_idx] + math.pi - ang_mat[j_idx]
    theta = np.arctan2(np.sin(theta), np.cos(theta))
    anchor = np.empty((rows, 2))
    anchor[0::2] = ref_a[i_idx]
    anchor[1::2] = ref_b[i_idx]
    p_anchor = np.repeat(mat_a[j_idx], 2, axis=0)

    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    tx = anchor[:, 0] - (cos_t * p_anchor[:, 0] - sin_t * p_anchor[:, 1])
    ty = anchor[:, 1] - (sin_t * p_anchor[:, 0] + cos_t * p_anchor[:, 1])

    px = centers[:, 0].astype(np.float64)
    py = centers[:, 1].astype(np.float64)
    n_centers = len(centers)
    bits = np.ascontiguousarray(ref_img.bits)

    best_overlap = -1.0
    best_row = -1
    evaluated = 0
    scores = np.empty(rows) if collect_candidates else None
    for start in range(0, rows, _SCORE_CHUNK):
        stop = min(start + _SCORE_CHUNK, rows)
        sl = slice(start, stop)
        hits = score_hypotheses(cos_t[sl], sin_t[sl], tx[sl], ty[sl],
                                px, py, bits, ref_img.width, ref_img.height)
        misses = n_centers - hits
        chunk = 1.0 - misses / n_centers
        if scores is not None:
            scores[sl] = chunk
        evaluated = stop
        chunk_best = int(np.argmax(chunk))
        if chunk[chunk_best] > best_overlap:
            best_overlap = float(chunk[chunk_best])
            best_row = start + chunk_best
        if best_overlap >= cfg.match_early_exit:
            break

    if best_overlap < cfg.match_accept_threshold:
        raise MatchRejected(best_overlap, cfg.match_accept_threshold)

    cand = best_row // 2
    assignment = Assignment.DIRECT if best_row % 2 == 0 else Assignment.SWAPPED
    best = MatchHypothesis(theta=float(theta[best_row]),
                           t=np.array([tx[best_row], ty[best_row]]),
                           assignment=assignment, overlap=best_overlap)
    i_best, j_best = int(i_idx[cand]), int(j_idx[cand])
    mid_matched = (mat_a[j_best] + mat_b[j_best]) / 2.0
    mid_ref = (ref_a[i_best] + ref_b[i_best]) / 2.0

    table = None
    if collect_candidates:
        table = [CandidateScore(d_ref=float(d_ref[i_idx[row // 2]]),
                                d_matched=float(d_matched[j_idx[row // 2]]),
                                assignment=(Assignment.DIRECT if row % 2 == 0
                                            else Assignment.SWAPPED),
                                theta=float(theta[row]),
                                t=np.array([tx[row], ty[row]]),
                                overlap=float(scores[row]))
                 for row in range(evaluated)]

    return ImageMatch(best=best, corr_matched=mid_matched,
                      corr_reference=mid_ref,
                      n_keypoints_ref=len(kp_ref),
                      n_keypoints_matched=len(kp_matched),
                      n_candidates=n_candidates, n_evaluated=evaluated,
                      candidates=table)
