"""Canopy selection, projection to a binary raster, and image cleanup.

Vegetation above the height cutoff is projected onto the horizontal
plane as a georeferenced bit image, then closed (dilation + erosion)
and median-filtered to fill sampling holes and smooth contours.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CanopyHeightMode, PlotConfig
from .errors import EmptyCanopy
from .geometry import Label, PointCloud
from .ground_alignment import LeveledCloud


@dataclass
class BinaryImage:
    """Georeferenced bit raster.

    Pixel (u, v)'s center sits at world
    (origin_x + (u + 0.5) * resolution, origin_y + (v + 0.5) * resolution);
    v increases with world y. `bits` is row-major (height, width) uint8.
    """

    width: int
    height: int
    origin_x: float
    origin_y: float
    resolution: float
    bits: np.ndarray

    def world_to_pixel(self, x, y):
        u = np.floor((np.asarray(x) - self.origin_x) / self.resolution)
        v = np.floor((np.asarray(y) - self.origin_y) / self.resolution)
        return u.astype(np.int64), v.astype(np.int64)

    def pixel_to_world(self, u, v):
        x = self.origin_x + (np.asarray(u, dtype=np.float64) + 0.5) * self.resolution
        y = self.origin_y + (np.asarray(v, dtype=np.float64) + 0.5) * self.resolution
        return x, y

    def count_set(self) -> int:
        return int(self.bits.sum())

    def same_grid(self, bits: np.ndarray) -> "BinaryImage":
        return BinaryImage(self.width, self.height, self.origin_x,
                           self.origin_y, self.resolution, bits)


def select_canopy(leveled: LeveledCloud, mode: CanopyHeightMode) -> PointCloud:
    """Keep vegetation above the cutoff height.

    fixed: points more than `height` m above the leveled ground plane.
    three_quarters: points above z_min + 0.75 * (z_max - z_min) of the
    whole cloud. Ground-labeled points are excluded when labels exist.
    """
    cloud = leveled.cloud
    z = cloud.points[:, 2]
    if mode.kind == "fixed":
        z_ground = leveled.plane_after.height_at(0.0, 0.0)
        cutoff = z_ground + mode.height
    elif mode.kind == "three_quarters":
        z_min, z_max = float(z.min()), float(z.max())
        cutoff = z_min + 0.75 * (z_max - z_min)
    else:
        raise ValueError(f"unknown canopy mode {mode.kind!r}")
    mask = z > cutoff
    if cloud.labels is not None:
        mask &= cloud.labels != Label.GROUND
    if not np.any(mask):
        raise EmptyCanopy(f"no vegetation above cutoff z = {cutoff:.2f} m")
    return cloud.select(mask)


def rasterize(points: PointCloud, resolution: float) -> BinaryImage:
    """Project points to half-open cells [x, x+res) with 1 px padding."""
    xy = points.points[:, :2]
    x_min, y_min = xy.min(axis=0)
    x_max, y_max = xy.max(axis=0)
    cols = int(np.floor((x_max - x_min) / resolution)) + 1
    rows = int(np.floor((y_max - y_min) / resolution)) + 1
    width, height = cols + 2, rows + 2
    origin_x = float(x_min) - resolution
    origin_y = float(y_min) - resolution

    u = np.floor((xy[:, 0] - origin_x) / resolution).astype(np.int64)
    v = np.floor((xy[:, 1] - origin_y) / resolution).astype(np.int64)
    bits = np.zeros((height, width), dtype=np.uint8)
    bits[v, u] = 1
    return BinaryImage(width, height, origin_x, origin_y, resolution, bits)


def _window_counts(bits: np.ndarray, kernel: int) -> np.ndarray:
    """Number of set pixels in the kernel x kernel window around each pixel,
    with out-of-bounds treated as 0 (computed via an integral image)."""
    h, w = bits.shape
    r = kernel // 2
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=np.int64)
    padded[r:r + h, r:r + w] = bits
    ii = np.zeros((h + 2 * r + 1, w + 2 * r + 1), dtype=np.int64)
    np.cumsum(np.cumsum(padded, axis=0), axis=1, out=ii[1:, 1:])
    return (ii[kernel:, kernel:] - ii[:-kernel, kernel:]
            - ii[kernel:, :-kernel] + ii[:-kernel, :-kernel])


def dilate(img: BinaryImage, kernel: int) -> BinaryImage:
    """OR over a square window; georeferencing is unchanged."""
    counts = _window_counts(img.bits, kernel)
    return img.same_grid((counts >= 1).astype(np.uint8))


def erode(img: BinaryImage, kernel: int) -> BinaryImage:
    """AND over a square window (borders erode against background)."""
    counts = _window_counts(img.bits, kernel)
    return img.same_grid((counts == kernel * kernel).astype(np.uint8))


def median_filter(img: BinaryImage, kernel: int) -> BinaryImage:
    """Binary median: majority vote over the window (kernel odd)."""
    counts = _window_counts(img.bits, kernel)
    return img.same_grid((counts > (kernel * kernel) // 2).astype(np.uint8))


def make_canopy_image(leveled: LeveledCloud, cfg: PlotConfig) -> BinaryImage:
    """Full chain: select, project, close (dilate + erode), median-filter."""
    canopy = select_canopy(leveled, cfg.canopy_height_mode)
    img = rasterize(canopy, cfg.projection_resolution)
    img = dilate(img, cfg.morphology_kernel)
    img = erode(img, cfg.morphology_kernel)
    return median_filter(img, cfg.median_kernel)


def canopy_image_stages(leveled: LeveledCloud, cfg: PlotConfig) -> dict:
    """All intermediate rasters, for debug dumps."""
    canopy = select_canopy(leveled, cfg.canopy_height_mode)
    raw = rasterize(canopy, cfg.projection_resolution)
    dilated = dilate(raw, cfg.morphology_kernel)
    eroded = erode(dilated, cfg.morphology_kernel)
    median = median_filter(eroded, cfg.median_kernel)
    return {"raw": raw, "dilated": dilated, "eroded": eroded, "median": median}
