"""Fused numba kernels for the per-point and per-hypothesis hot loops.

Both kernels reproduce the corresponding numpy expressions operation for
operation (same IEEE float64 sequence, no fast-math), so results are
bit-identical to the reference formulations used in the tests.
"""

from __future__ import annotations

import numba
import numpy as np

# The default TBB layer is version-sensitive; OpenMP behaves everywhere
# this package targets and avoids the probe warning.
numba.config.THREADING_LAYER = "omp"

from numba import njit, prange


def set_thread_cap(budget: int) -> None:
    """Cap numba's worker threads; budget <= 0 leaves the default."""
    if budget > 0:
        numba.set_num_threads(max(1, min(budget, numba.config.NUMBA_NUM_THREADS)))


@njit(cache=True, parallel=True)
def classify_against_cloth(x, y, z, grid, cols, rows, origin_x, origin_y,
                           resolution, threshold, ground_label, veg_label):
    """Ground/vegetation labels from vertical distance to the cloth.

    Bilinear interpolation of the cloth grid, clamped at the boundary;
    mirrors ClothGrid.height_at exactly.
    """
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int8)
    for k in prange(n):
        gx = (x[k] - origin_x) / resolution
        gy = (y[k] - origin_y) / resolution
        if gx < 0.0:
            gx = 0.0
        elif gx > cols - 1.0:
            gx = cols - 1.0
        if gy < 0.0:
            gy = 0.0
        elif gy > rows - 1.0:
            gy = rows - 1.0
        i0 = int(gx)
        if i0 > cols - 2:
            i0 = cols - 2
        j0 = int(gy)
        if j0 > rows - 2:
            j0 = rows - 2
        fx = gx - i0
        fy = gy - j0
        base = j0 * cols + i0
        h00 = grid[base]
        h01 = grid[base + 1]
        h10 = grid[base + cols]
        h11 = grid[base + cols + 1]
        top = h00 + fx * (h01 - h00)
        bottom = h10 + fx * (h11 - h10)
        top += fy * (bottom - top)
        dist = -z[k] - top
        if dist < 0.0:
            dist = -dist
        labels[k] = ground_label if dist <= threshold else veg_label
    return labels


@njit(cache=True, parallel=True)
def score_hypotheses(cos_t, sin_t, tx, ty, px, py, bits, width, height):
    """Canopy hits per hypothesis: transformed centers sampled at the
    nearest reference pixel, out of bounds counting as background."""
    n_rows = cos_t.shape[0]
    n_centers = px.shape[0]
    hits = np.zeros(n_rows, dtype=np.int64)
    for r in prange(n_rows):
        c = cos_t[r]
        s = sin_t[r]
        ox = tx[r]
        oy = ty[r]
        count = 0
        for k in range(n_centers):
            qx = c * px[k] - s * py[k] + ox
            qy = s * px[k] + c * py[k] + oy
            u = int(np.floor(qx + 0.5))
            v = int(np.floor(qy + 0.5))
            if 0 <= u < width and 0 <= v < height:
                count += bits[v, u]
        hits[r] = count
    return hits


def warm_up() -> None:
    """Force-compile (or load from cache) both kernels."""
    grid = np.zeros(4, dtype=np.float64)
    classify_against_cloth(np.zeros(1), np.zeros(1), np.zeros(1), grid,
                           2, 2, 0.0, 0.0, 1.0, 0.5,
                           np.int8(1), np.int8(2))
    bits = np.zeros((2, 2), dtype=np.uint8)
    score_hypotheses(np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1),
                     np.zeros(1), np.zeros(1), bits, 2, 2)
