"""End-to-end registration: coarse alignment then ICP refinement.

Coarse alignment levels both clouds on their fitted ground planes,
recovers the vertical-axis rotation and the horizontal offset from the
canopy image match, and composes the full rigid transform mapping the
raw ground-LiDAR frame onto the raw aerial frame. ICP then polishes
the residual error using all points.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._kernels import set_thread_cap
from .canopy_raster import BinaryImage, make_canopy_image
from .config import PlotConfig
from .errors import EmptyCorrespondences, NoCorrespondences
from .geometry import (PointCloud, RigidTransform, compose,
                       rotation_about_axis, rotation_z)
from .ground_alignment import LeveledCloud, fit_and_level
from .ground_filter import classify_ground
from .matcher import ImageMatch, match_images

MIN_ICP_PAIRS = 10


def thread_budget() -> int:
    """Worker cap from CANOPY_ALIGN_THREADS (0 or unset means auto)."""
    raw = os.environ.get("CANOPY_ALIGN_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        return 1
    if value <= 0:
        return min(2, os.cpu_count() or 1)
    return value


@dataclass
class CloudPrep:
    """Per-cloud products of the filtering/leveling/projection stages."""

    leveled: LeveledCloud
    image: BinaryImage
    filter_seconds: float
    align_seconds: float
    raster_seconds: float


@dataclass
class CoarseDiagnostics:
    reference: CloudPrep
    moving: CloudPrep
    match: ImageMatch
    theta: float
    overlap: float
    timing: dict = field(default_factory=dict)


def _prepare_cloud(cloud: PointCloud, cfg: PlotConfig) -> CloudPrep:
    t0 = time.perf_counter()
    labeled = classify_ground(cloud, cfg)
    t1 = time.perf_counter()
    leveled = fit_and_level(labeled, cfg)
    t2 = time.perf_counter()
    image = make_canopy_image(leveled, cfg)
    t3 = time.perf_counter()
    return CloudPrep(leveled=leveled, image=image,
                     filter_seconds=t1 - t0, align_seconds=t2 - t1,
                     raster_seconds=t3 - t2)


def coarse_register(uls: PointCloud, ground: PointCloud, cfg: PlotConfig,
                    collect_candidates: bool = False):
    """Coarse rigid transform mapping the ground-LiDAR frame onto the
    aerial frame, plus stage diagnostics.

    Both clouds are ground-filtered and leveled; the canopy images are
    matched; the vertical-axis rotation comes from the image match and
    the translation from the matched pair midpoints (pixel coordinates
    converted to leveled-frame meters, heights read off the leveled
    ground planes).
    """
    budget = thread_budget()
    set_thread_cap(budget)
    if budget >= 2:
        with ThreadPoolExecutor(max_workers=2) as pool:
            ref_future = pool.submit(_prepare_cloud, uls, cfg)
            mov_future = pool.submit(_prepare_cloud, ground, cfg)
            prep_ref = ref_future.result()
            prep_mov = mov_future.result()
    else:
        prep_ref = _prepare_cloud(uls, cfg)
        prep_mov = _prepare_cloud(ground, cfg)

    t0 = time.perf_counter()
    match = match_images(prep_ref.image, prep_mov.image, cfg,
                         collect_candidates=collect_candidates)
    match_seconds = time.perf_counter() - t0

    theta = match.best.theta
    rot_z = rotation_z(theta)
    lev_ref = prep_ref.leveled
    lev_mov = prep_mov.leveled

    # Midpoints of the winning pairs, in each cloud's leveled frame.
    xu, yu = prep_ref.image.pixel_to_world(match.corr_reference[0],
                                           match.corr_reference[1])
    xt, yt = prep_mov.image.pixel_to_world(match.corr_matched[0],
                                           match.corr_matched[1])
    zu = lev_ref.plane_after.height_at(xu, yu)
    zt = lev_mov.plane_after.height_at(xt, yt)
    translation_leveled = (np.array([xu, yu, zu])
                           - rot_z @ np.array([xt, yt, zt]))

    rot_ref_inv = lev_ref.leveling.T
    rotation = rot_ref_inv @ rot_z @ lev_mov.leveling
    translation = rot_ref_inv @ translation_leveled
    transform = RigidTransform(rotation, translation)

    timing = {
        "filtering": prep_ref.filter_seconds + prep_mov.filter_seconds,
        "ground_alignment": prep_ref.align_seconds + prep_mov.align_seconds,
        "image_matching": (prep_ref.raster_seconds + prep_mov.raster_seconds
                           + match_seconds),
    }
    diagnostics = CoarseDiagnostics(reference=prep_ref, moving=prep_mov,
                                    match=match, theta=theta,
                                    overlap=match.best.overlap, timing=timing)
    return transform, diagnostics


# --- ICP ----------------------------------------------------------------------


def _grid_subsample_indices(points: np.ndarray, cell: float) -> np.ndarray:
    """Index of the first point in each occupied cell of a cubic grid."""
    keys = np.floor(points / cell).astype(np.int64)
    keys -= keys.min(axis=0)
    spans = keys.max(axis=0) + 1
    flat = (keys[:, 0] * spans[1] + keys[:, 1]) * spans[2] + keys[:, 2]
    _, first = np.unique(flat, return_index=True)
    return np.sort(first)


def _rigid_update(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion src -> dst, linearized for small angles.

    Solves for a rotation vector and translation about the source
    centroid (which decouples the normal equations), then exponentiates
    the rotation vector so the result is exactly orthonormal.
    """
    centroid = src.mean(axis=0)
    x = src - centroid
    r = dst - src
    a = np.einsum("ij,ij->", x, x) * np.eye(3) - x.T @ x
    b = np.cross(x, r).sum(axis=0)
    try:
        delta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        delta = np.linalg.lstsq(a, b, rcond=None)[0]
    angle = float(np.linalg.norm(delta))
    if angle < 1e-15:
        rotation = np.eye(3)
    else:
        rotation = rotation_about_axis(delta / angle, angle)
    translation = r.mean(axis=0) + centroid - rotation @ centroid
    return RigidTransform(rotation, translation)


@dataclass
class IcpDiagnostics:
    residuals: list        # mean gated NN distance, initial + per accepted step
    iterations: int
    pair_count: int


def fine_register_icp(reference: PointCloud, moving: PointCloud,
                      init: RigidTransform, cfg: PlotConfig,
                      return_diagnostics: bool = False):
    """Point-to-point ICP from `init`, returning the composed transform.

    The moving cloud is grid-subsampled, correspondences are gated at
    the max-correspondence radius, and an update is accepted only if it
    does not increase the mean residual; iteration stops on residual
    convergence or the iteration cap.
    """
    if cfg.icp_max_iter == 0:
        return (init, IcpDiagnostics([], 0, 0)) if return_diagnostics else init

    sub = moving.points[_grid_subsample_indices(moving.points,
                                                cfg.icp_subsample)]
    tree = cKDTree(reference.points)
    gate = cfg.icp_max_correspondence
    current = init

    def residual(transform: RigidTransform):
        pts = sub @ transform.rotation.T + transform.translation
        dists, idx = tree.query(pts, distance_upper_bound=gate)
        mask = np.isfinite(dists)
        return pts, dists, idx, mask

    pts, dists, idx, mask = residual(current)
    pairs = int(mask.sum())
    if pairs < MIN_ICP_PAIRS:
        raise NoCorrespondences(
            f"only {pairs} gated pairs (< {MIN_ICP_PAIRS}) at init")
    mean_res = float(dists[mask].mean())
    residuals = [mean_res]
    iterations = 0

    for _ in range(cfg.icp_max_iter):
        update = _rigid_update(pts[mask], reference.points[idx[mask]])
        candidate = compose(update, current)
        new_pts, new_dists, new_idx, new_mask = residual(candidate)
        new_pairs = int(new_mask.sum())
        if new_pairs < MIN_ICP_PAIRS:
            raise NoCorrespondences(
                f"only {new_pairs} gated pairs (< {MIN_ICP_PAIRS})")
        new_res = float(new_dists[new_mask].mean())
        if new_res > mean_res:
            break
        current = candidate
        iterations += 1
        residuals.append(new_res)
        converged = abs(mean_res - new_res) < cfg.icp_convergence_tol
        pts, dists, idx, mask = new_pts, new_dists, new_idx, new_mask
        mean_res = new_res
        pairs = new_pairs
        if converged:
            break

    if return_diagnostics:
        return current, IcpDiagnostics(residuals, iterations, pairs)
    return current


# --- metrics and report --------------------------------------------------------


@dataclass(frozen=True)
class RmseStats:
    minimum: float
    maximum: float
    average: float
    rmse: float

    def as_dict(self) -> dict:
        return {"min": self.minimum, "max": self.maximum,
                "avg": self.average, "rmse": self.rmse}


def evaluate_rmse(correspondences) -> RmseStats:
    """Min/max/average/RMSE of horizontal (xy) distances between
    corresponding features."""
    arr = np.asarray(correspondences, dtype=np.float64)
    if arr.size == 0:
        raise EmptyCorrespondences("no correspondences given")
    arr = arr.reshape(-1, 2, 3)
    delta = arr[:, 0, :2] - arr[:, 1, :2]
    dists = np.hypot(delta[:, 0], delta[:, 1])
    return RmseStats(minimum=float(dists.min()), maximum=float(dists.max()),
                     average=float(dists.mean()),
                     rmse=float(math.sqrt(float((dists ** 2).mean()))))


@dataclass
class RegistrationReport:
    coarse: RigidTransform
    fine: RigidTransform
    overlap: float
    theta: float
    timing: dict
    rmse_coarse: RmseStats | None = None
    rmse_fine: RmseStats | None = None
    diagnostics: CoarseDiagnostics | None = None

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.fine.rotation.ravel()],
            "translation": [float(x) for x in self.fine.translation],
            "coarse_rotation": [float(x) for x in self.coarse.rotation.ravel()],
            "coarse_translation": [float(x) for x in self.coarse.translation],
            "theta_deg": math.degrees(self.theta),
            "overlap": self.overlap,
            "timing": {k: float(v) for k, v in self.timing.items()},
            "rmse": {
                "coarse": self.rmse_coarse.as_dict() if self.rmse_coarse else None,
                "fine": self.rmse_fine.as_dict() if self.rmse_fine else None,
            },
        }


def transform_to_dict(t: RigidTransform) -> dict:
    return {"rotation": [float(x) for x in t.rotation.ravel()],
            "translation": [float(x) for x in t.translation]}


def transform_from_dict(data: dict) -> RigidTransform:
    rotation = np.array(data["rotation"], dtype=np.float64).reshape(3, 3)
    translation = np.array(data["translation"], dtype=np.float64)
    return RigidTransform(rotation, translation)


def _aligned_pairs(correspondences, transform: RigidTransform) -> np.ndarray:
    arr = np.asarray(correspondences, dtype=np.float64).reshape(-1, 2, 3)
    moved = arr[:, 1] @ transform.rotation.T + transform.translation
    return np.stack([arr[:, 0], moved], axis=1)


def register(uls: PointCloud, ground: PointCloud, cfg: PlotConfig,
             correspondences=None, coarse_only: bool = False,
             collect_candidates: bool = False) -> RegistrationReport:
    """Full pipeline. `correspondences` is an optional (n, 2, 3) array of
    (aerial feature, ground-frame feature) pairs used for the accuracy
    block of the report."""
    coarse, diagnostics = coarse_register(uls, ground, cfg,
                                          collect_candidates=collect_candidates)
    timing = dict(diagnostics.timing)
    if coarse_only:
        fine = coarse
        timing["icp"] = 0.0
    else:
        t0 = time.perf_counter()
        fine = fine_register_icp(uls, ground, coarse, cfg)
        timing["icp"] = time.perf_counter() - t0

    rmse_coarse = rmse_fine = None
    if correspondences is not None:
        rmse_coarse = evaluate_rmse(_aligned_pairs(correspondences, coarse))
        rmse_fine = evaluate_rmse(_aligned_pairs(correspondences, fine))

    return RegistrationReport(coarse=coarse, fine=fine,
                              overlap=diagnostics.overlap,
                              theta=diagnostics.theta, timing=timing,
                              rmse_coarse=rmse_coarse, rmse_fine=rmse_fine,
                              diagnostics=diagnostics)
