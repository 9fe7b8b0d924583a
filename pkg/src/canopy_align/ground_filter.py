"""Ground/vegetation classification by cloth simulation filtering.

Point heights are inverted and a regular cloth grid drops from above
onto the inverted surface: each iteration applies a fixed gravity step,
pins nodes that reach the highest inverted point in their footprint,
and relaxes movable nodes halfway toward their 4-neighbor mean. A point
is ground when its vertical distance to the settled cloth is at most
the classification threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import classify_against_cloth
from .config import PlotConfig
from .errors import DegenerateExtent, EmptyCloud
from .geometry import Label, PointCloud

# Gravity step per iteration, as a fraction of the cloth resolution.
# Converges well within the iteration budget for tens of meters of relief.
GRAVITY_FACTOR = 0.1

# Simulation stops once no node moves farther than this per iteration.
SETTLE_EPS = 1e-4


@dataclass
class ClothGrid:
    """Settled cloth state over the inverted cloud."""

    cols: int
    rows: int
    resolution: float
    origin_x: float
    origin_y: float
    particle_height: np.ndarray  # (rows, cols), inverted-world heights
    movable: np.ndarray          # (rows, cols) bool
    target_height: np.ndarray    # (rows, cols), -inf where no points

    def height_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Bilinear cloth height; clamped to the grid at the boundary."""
        gx = np.clip((x - self.origin_x) / self.resolution, 0.0, self.cols - 1.0)
        gy = np.clip((y - self.origin_y) / self.resolution, 0.0, self.rows - 1.0)
        i0 = np.minimum(gx.astype(np.int64), self.cols - 2)
        j0 = np.minimum(gy.astype(np.int64), self.rows - 2)
        fx = gx - i0
        fy = gy - j0
        flat = self.particle_height.ravel()
        base = j0 * self.cols + i0
        h00 = flat[base]
        h01 = flat[base + 1]
        h10 = flat[base + self.cols]
        h11 = flat[base + self.cols + 1]
        top = h00 + fx * (h01 - h00)
        bottom = h10 + fx * (h11 - h10)
        top += fy * (bottom - top)
        return top


def settle_cloth(points: np.ndarray, cfg: PlotConfig) -> ClothGrid:
    """Drop and settle the cloth over the inverted points."""
    res = cfg.cloth_resolution
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    x_min, x_max = float(x.min()), float(x.max())
    y_min, y_max = float(y.min()), float(y.max())
    if x_max - x_min < res or y_max - y_min < res:
        raise DegenerateExtent(
            f"cloud footprint {x_max - x_min:.2f} x {y_max - y_min:.2f} m is "
            f"smaller than one cloth cell ({res:.2f} m)")

    cols = int(np.ceil((x_max - x_min) / res)) + 1
    rows = int(np.ceil((y_max - y_min) / res)) + 1

    inverted = -z
    # Highest inverted point near each node (nearest-node footprint).
    col_idx = np.minimum(((x - x_min) / res + 0.5).astype(np.int64), cols - 1)
    row_idx = np.minimum(((y - y_min) / res + 0.5).astype(np.int64), rows - 1)
    target = np.full(rows * cols, -np.inf)
    np.maximum.at(target, row_idx * cols + col_idx, inverted)
    target = target.reshape(rows, cols)

    height = np.full((rows, cols), float(inverted.max()))
    movable = np.ones((rows, cols), dtype=bool)
    gravity = GRAVITY_FACTOR * res

    def pin():
        reached = movable & (height <= target)
        height[reached] = target[reached]
        movable[reached] = False

    nb_count = np.full((rows, cols), 4.0)
    nb_count[0, :] -= 1
    nb_count[-1, :] -= 1
    nb_count[:, 0] -= 1
    nb_count[:, -1] -= 1

    for _ in range(cfg.cloth_max_iter):
        prev = height.copy()
        height[movable] -= gravity
        pin()
        nb_sum = np.zeros_like(height)
        nb_sum[1:, :] += height[:-1, :]
        nb_sum[:-1, :] += height[1:, :]
        nb_sum[:, 1:] += height[:, :-1]
        nb_sum[:, :-1] += height[:, 1:]
        relaxed = 0.5 * (height + nb_sum / nb_count)
        height[movable] = relaxed[movable]
        pin()
        if np.max(np.abs(height - prev)) < SETTLE_EPS:
            break

    return ClothGrid(cols=cols, rows=rows, resolution=res,
                     origin_x=x_min, origin_y=y_min,
                     particle_height=height, movable=movable,
                     target_height=target)


def classify_ground(cloud: PointCloud, cfg: PlotConfig) -> PointCloud:
    """Label every point Ground or Vegetation (overwrites existing labels)."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot classify an empty cloud")
    cloth = settle_cloth(cloud.points, cfg)
    pts = np.ascontiguousarray(cloud.points.T)
    labels = classify_against_cloth(
        pts[0], pts[1], pts[2], cloth.particle_height.ravel(),
        cloth.cols, cloth.rows, cloth.origin_x, cloth.origin_y,
        cloth.resolution, cfg.cloth_class_threshold,
        np.int8(Label.GROUND), np.int8(Label.VEGETATION))
    return cloud.with_labels(labels)
