"""Shared 3D types and rigid-motion algebra.

Rotations are plain 3x3 row-major numpy arrays kept orthonormal with
determinant +1; angles are radians everywhere inside the library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

ORTHONORMAL_TOL = 1e-9


class Label(IntEnum):
    UNCLASSIFIED = 0
    GROUND = 1
    VEGETATION = 2


@dataclass
class PointCloud:
    """Ordered 3D points in meters with an optional per-point class label."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {self.points.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (len(self.points),):
                raise ValueError("labels length must match point count")

    def __len__(self) -> int:
        return len(self.points)

    def with_labels(self, labels: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, labels)

    def select(self, mask: np.ndarray) -> "PointCloud":
        labels = self.labels[mask] if self.labels is not None else None
        return PointCloud(self.points[mask], labels)


def is_rotation(m: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    """True if m is orthonormal with determinant +1 within tol per entry."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        return False
    if not np.all(np.abs(m.T @ m - np.eye(3)) <= tol):
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    _skip_checks: bool = field(default=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not self._skip_checks and not is_rotation(self.rotation, tol=1e-8):
            raise ValueError("rotation must be orthonormal with det +1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Plane:
    """Plane a*x + b*y + c*z + d = 0 with unit, upward-pointing normal."""

    a: float
    b: float
    c: float
    d: float

    @staticmethod
    def from_coeffs(a: float, b: float, c: float, d: float) -> "Plane":
        """Normalize (a, b, c) to unit length and canonicalize c > 0."""
        norm = math.sqrt(a * a + b * b + c * c)
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError("plane normal must be nonzero and finite")
        a, b, c, d = a / norm, b / norm, c / norm, d / norm
        if c < 0.0:
            a, b, c, d = -a, -b, -c, -d
        return Plane(a, b, c, d)

    @staticmethod
    def from_normal_point(normal: np.ndarray, point: np.ndarray) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        p = np.asarray(point, dtype=np.float64)
        return Plane.from_coeffs(n[0], n[1], n[2], -float(n @ p))

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.normal + self.d

    def height_at(self, x, y):
        """z of the plane at (x, y): z = -(a*x + b*y + d) / c."""
        return -(self.a * x + self.b * y + self.d) / self.c

    def rotated(self, rotation: np.ndarray) -> "Plane":
        """Plane after rotating every point about the origin by `rotation`."""
        n = rotation @ self.normal
        return Plane.from_coeffs(n[0], n[1], n[2], self.d)


def skew_matrix(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v] with skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=np.float64)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_between_vectors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Proper rotation mapping unit vector a onto unit vector b.

    Uses R = I + [v] + [v]^2 * (1 - c) / s^2 with v = a x b, s = |v|,
    c = a . b. Degenerate cases: parallel inputs give the identity;
    antiparallel inputs give a half-turn about an axis orthogonal to a
    (the larger of a x e_x, a x e_y).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    c = float(a @ b)
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        axis = np.cross(a, [1.0, 0.0, 0.0])
        alt = np.cross(a, [0.0, 1.0, 0.0])
        if np.linalg.norm(alt) > np.linalg.norm(axis):
            axis = alt
        axis = axis / np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = skew_matrix(v)
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation by `angle` radians about the unit vector `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = skew_matrix(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_z(theta: float) -> np.ndarray:
    """Counterclockwise rotation by theta about the world vertical."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])


def apply(t: RigidTransform, c: PointCloud) -> PointCloud:
    """Transform every point; labels are carried through unchanged."""
    pts = c.points @ t.rotation.T + t.translation
    return PointCloud(pts, None if c.labels is None else c.labels.copy())


def apply_points(t: RigidTransform, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ t.rotation.T + t.translation


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Transform equal to applying `inner` first, then `outer`."""
    return RigidTransform(outer.rotation @ inner.rotation,
                          outer.rotation @ inner.translation + outer.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def rotation_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in [0, pi] radians."""
    cos_angle = (np.trace(a.T @ b) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))
