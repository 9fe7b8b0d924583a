"""Ground plane fitting and leveling.

A RANSAC plane is fitted to the ground-labeled points and the cloud is
rotated so that the fitted normal becomes the world vertical, giving
both inputs a consistent vertical axis before canopy matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PlotConfig
from .errors import DegenerateGeometry
from .geometry import (Label, Plane, PointCloud, rotation_between_vectors)

# Inlier counting and refinement use at most this many points; RANSAC on
# multi-million-point ground returns is statistically identical and keeps
# the alignment stage well under the runtime budget.
MAX_EVAL_POINTS = 30000

VERTICAL = np.array([0.0, 0.0, 1.0])


@dataclass
class LeveledCloud:
    """A cloud rotated so its fitted ground plane is horizontal."""

    cloud: PointCloud
    leveling: np.ndarray      # rotation applied to the raw points
    plane_before: Plane
    plane_after: Plane


def fit_plane_ransac(ground_points: PointCloud, iterations: int,
                     inlier_tol: float, seed: int) -> Plane:
    """Best RANSAC plane, refined by least squares over its inliers.

    Deterministic for a given seed. Raises DegenerateGeometry when no
    non-collinear 3-point sample is found within the iteration budget.
    """
    pts = ground_points.points if isinstance(ground_points, PointCloud) \
        else np.asarray(ground_points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise DegenerateGeometry(f"plane fit needs >= 3 points, got {n}")

    rng = np.random.default_rng(seed)
    if n > MAX_EVAL_POINTS:
        pts = pts[rng.choice(n, MAX_EVAL_POINTS, replace=False)]
        n = MAX_EVAL_POINTS

    # Index triples drawn with replacement; a collision yields a zero
    # normal and the sample is skipped like any other degenerate triple.
    samples = rng.integers(0, n, size=(max(iterations, 1), 3))
    p0 = pts[samples[:, 0]]
    normals = np.cross(pts[samples[:, 1]] - p0, pts[samples[:, 2]] - p0)
    norms = np.linalg.norm(normals, axis=1)
    scale = max(float(np.abs(pts - pts.mean(axis=0)).max()), 1.0)
    valid = norms > 1e-12 * scale * scale
    if not np.any(valid):
        raise DegenerateGeometry("all RANSAC samples collinear")

    normals[valid] /= norms[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, p0)
    # Signed distances of every point to every valid candidate plane.
    dists = np.abs(pts @ normals[valid].T + offsets[valid])
    counts = (dists <= inlier_tol).sum(axis=0)
    best = int(np.argmax(counts))
    best_idx = np.flatnonzero(valid)[best]

    inliers = pts[dists[:, best] <= inlier_tol]
    if len(inliers) < 3:
        inliers = pts[samples[best_idx]]
    return _least_squares_plane(inliers)


def _least_squares_plane(points: np.ndarray) -> Plane:
    """Total least-squares plane through the points (C > 0 canonical)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]  # eigenvector of the smallest eigenvalue
    if np.linalg.norm(normal) == 0.0:
        raise DegenerateGeometry("least-squares plane is degenerate")
    return Plane.from_normal_point(normal, centroid)


def level(cloud: PointCloud, plane: Plane) -> LeveledCloud:
    """Rotate the cloud (about the world origin) to make `plane` horizontal."""
    rotation = rotation_between_vectors(plane.normal, VERTICAL)
    rotated = PointCloud(cloud.points @ rotation.T,
                         None if cloud.labels is None else cloud.labels.copy())
    return LeveledCloud(cloud=rotated, leveling=rotation,
                        plane_before=plane, plane_after=plane.rotated(rotation))


def fit_and_level(cloud: PointCloud, cfg: PlotConfig) -> LeveledCloud:
    """Fit the ground plane on ground-labeled points and level the cloud."""
    if cloud.labels is None:
        raise DegenerateGeometry("cloud has no ground labels; run the ground "
                                 "filter first")
    ground = cloud.select(cloud.labels == Label.GROUND)
    plane = fit_plane_ransac(ground, cfg.ransac_iterations,
                             cfg.ransac_inlier_tol, cfg.rng_seed)
    return level(cloud, plane)
