"""Synthetic forest plots with exact ground truth.

Generates paired aerial/ground LiDAR clouds of a parametric plot: tilted
(optionally undulating) terrain, trees laid out on a jittered grid or by
Poisson-disk dart throwing, and ellipsoid or cone crowns whose radii are
rescaled so the realized silhouette coverage hits the requested crown
density. The aerial cloud samples upper crown surfaces plus ground seen
through gaps (ground visibility decays with the number of crowns
overhead); the ground cloud samples terrain densely plus stems and the
lower/partly-upper crown surfaces. The ground cloud is emitted in a
frame displaced by the inverse of the known truth transform, so every
registration result can be checked against an exact oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import CanopyHeightMode
from .errors import SpecError
from .geometry import (Label, PointCloud, RigidTransform, apply_points,
                       invert, rotation_about_axis, rotation_z)

# Crown vertical extent as a fraction of tree height.
CROWN_DEPTH = {"ellipsoid": 0.45, "cone": 0.6}

# Ground seen from the air through c overlapping crowns has probability
# PENETRATION ** c of returning a ground hit.
PENETRATION = 0.25

# Ground-cloud composition: terrain, stem and crown return fractions.
GROUND_FRACTIONS = (0.55, 0.05, 0.40)

STEM_RADIUS = 0.12
STEM_MIN_HEIGHT = 0.3

# Ground system sees the full lower crown, plus a band above the widest
# cross-section (ellipsoids) or most of the side surface (cones).
ELLIPSOID_UPPER_BAND = 0.3
CONE_SIDE_FRACTION = 0.85
CONE_BASE_SHARE = 0.25


@dataclass(frozen=True)
class TerrainSpec:
    tilt_deg: float = 0.0
    undulation: float = 0.0  # amplitude in meters


@dataclass(frozen=True)
class RegularJitter:
    spacing: float
    jitter: float


@dataclass(frozen=True)
class PoissonDisk:
    min_dist: float


@dataclass(frozen=True)
class CrownSpec:
    radius_range: tuple
    height_range: tuple
    shape: str = "ellipsoid"  # "ellipsoid" | "cone"


@dataclass(frozen=True)
class PlotSpec:
    extent_x: float
    extent_y: float
    terrain: TerrainSpec
    stand_density: float  # trees per hectare
    layout: object        # RegularJitter | PoissonDisk
    crown: CrownSpec
    crown_density_target: float
    uls_density: float    # pts / m^2
    ground_density: float
    truth_transform: RigidTransform | None = None
    noise_sigma: float = 0.0
    seed: int = 0
    canopy_mode: CanopyHeightMode = field(
        default_factory=lambda: CanopyHeightMode.fixed(3.0))
    uls_margin: float = 0.0  # aerial coverage beyond the ground plot


@dataclass
class TreeSet:
    """Per-tree geometry, in world coordinates (plot centered at origin)."""

    position: np.ndarray   # (n, 2)
    radius: np.ndarray     # (n,) silhouette radius
    height: np.ndarray     # (n,) total tree height above local ground
    base: np.ndarray       # (n,) crown base height above local ground
    ground_z: np.ndarray   # (n,) terrain elevation at the stem
    shape: str

    def __len__(self) -> int:
        return len(self.radius)

    @property
    def apex(self) -> np.ndarray:
        """(n, 3) tree tops in world coordinates."""
        return np.column_stack([self.position,
                                self.ground_z + self.height])

    def in_core(self, extent_x: float, extent_y: float) -> np.ndarray:
        return ((np.abs(self.position[:, 0]) <= extent_x / 2)
                & (np.abs(self.position[:, 1]) <= extent_y / 2))


@dataclass
class GeneratedPlot:
    uls: PointCloud
    ground: PointCloud
    truth: RigidTransform
    uls_labels: np.ndarray
    ground_labels: np.ndarray
    trees: TreeSet
    spec: PlotSpec


def _validate(spec: PlotSpec) -> None:
    if spec.extent_x <= 0 or spec.extent_y <= 0:
        raise SpecError("plot extents must be positive")
    if spec.uls_density <= 0 or spec.ground_density <= 0:
        raise SpecError("point densities must be positive")
    if not 0.0 < spec.crown_density_target <= 1.0:
        raise SpecError("crown_density_target must be in (0, 1]")
    if spec.stand_density <= 0:
        raise SpecError("stand_density must be positive")
    lo, hi = spec.crown.radius_range
    if not 0 < lo <= hi:
        raise SpecError("crown radius range must be ordered and positive")
    lo, hi = spec.crown.height_range
    if not 0 < lo <= hi:
        raise SpecError("tree height range must be ordered and positive")
    if spec.crown.shape not in CROWN_DEPTH:
        raise SpecError(f"unknown crown shape {spec.crown.shape!r}")
    if isinstance(spec.layout, RegularJitter):
        if spec.layout.spacing <= 0 or spec.layout.jitter < 0:
            raise SpecError("layout spacing must be > 0, jitter >= 0")
    elif isinstance(spec.layout, PoissonDisk):
        if spec.layout.min_dist <= 0:
            raise SpecError("poisson min_dist must be > 0")
    else:
        raise SpecError(f"unknown layout {type(spec.layout).__name__}")
    if spec.noise_sigma < 0:
        raise SpecError("noise_sigma must be >= 0")
    if spec.uls_margin < 0:
        raise SpecError("uls_margin must be >= 0")


class _Terrain:
    def __init__(self, spec: PlotSpec, rng: np.random.Generator):
        self.slope = math.tan(math.radians(spec.terrain.tilt_deg))
        self.azimuth = float(rng.uniform(0.0, 2.0 * math.pi))
        self.amplitude = spec.terrain.undulation
        self.wavelength = max(spec.extent_x, spec.extent_y) / 1.5

    def z(self, xy: np.ndarray) -> np.ndarray:
        x, y = xy[..., 0], xy[..., 1]
        base = self.slope * (x * math.cos(self.azimuth)
                             + y * math.sin(self.azimuth))
        if self.amplitude == 0.0:
            return base
        w = 2.0 * math.pi / self.wavelength
        return base + self.amplitude * np.sin(w * x) * np.cos(w * y)


def _place_trees(spec: PlotSpec, count: int, half_x: float, half_y: float,
                 rng: np.random.Generator) -> np.ndarray:
    layout = spec.layout
    if isinstance(layout, RegularJitter):
        xs = np.arange(-half_x, half_x + 1e-9, layout.spacing)
        ys = np.arange(-half_y, half_y + 1e-9, layout.spacing)
        grid = np.array([(x, y) for y in ys for x in xs])
        if len(grid) < count:
            raise SpecError(
                f"grid layout has {len(grid)} slots for {count} trees; "
                f"decrease spacing or stand density")
        grid = grid[rng.permutation(len(grid))[:count]]
        return grid + rng.uniform(-layout.jitter, layout.jitter, (count, 2))
    positions = []
    attempts = 0
    min_sq = layout.min_dist ** 2
    while len(positions) < count:
        attempts += 1
        if attempts > 200 * count:
            raise SpecError(
                f"poisson layout placed {len(positions)}/{count} trees; "
                f"min_dist {layout.min_dist} too large for the plot")
        cand = rng.uniform([-half_x, -half_y], [half_x, half_y])
        if positions:
            d2 = ((np.array(positions) - cand) ** 2).sum(axis=1)
            if d2.min() < min_sq:
                continue
        positions.append(cand)
    return np.array(positions)


def _build_trees(spec: PlotSpec, terrain: _Terrain,
                 rng: np.random.Generator) -> TreeSet:
    half_x = spec.extent_x / 2 + spec.uls_margin
    half_y = spec.extent_y / 2 + spec.uls_margin
    area = 4.0 * half_x * half_y
    count = max(1, round(spec.stand_density * area / 1e4))
    position = _place_trees(spec, count, half_x, half_y, rng)

    radius = rng.uniform(*spec.crown.radius_range, count)
    height = rng.uniform(*spec.crown.height_range, count)
    depth = CROWN_DEPTH[spec.crown.shape]
    base = (1.0 - depth) * height

    # Rescale radii so the expected silhouette coverage of the core plot
    # hits the crown density target (Poisson union approximation).
    core = ((np.abs(position[:, 0]) <= spec.extent_x / 2)
            & (np.abs(position[:, 1]) <= spec.extent_y / 2))
    core_area = spec.extent_x * spec.extent_y
    silhouette = math.pi * float((radius[core] ** 2).sum())
    if silhouette <= 0:
        raise SpecError("no tree lands inside the core plot")
    target = min(spec.crown_density_target, 0.99)
    scale = math.sqrt(-math.log(1.0 - target) * core_area / silhouette)
    radius = radius * float(np.clip(scale, 0.25, 4.0))

    return TreeSet(position=position, radius=radius, height=height,
                   base=base, ground_z=terrain.z(position),
                   shape=spec.crown.shape)


def _upper_surface(trees: TreeSet, index: int, dist: np.ndarray) -> np.ndarray:
    """Absolute z of the crown's top surface at horizontal distance `dist`."""
    r = trees.radius[index]
    base_z = trees.ground_z[index] + trees.base[index]
    apex_z = trees.ground_z[index] + trees.height[index]
    if trees.shape == "ellipsoid":
        center = (base_z + apex_z) / 2.0
        b = (apex_z - base_z) / 2.0
        return center + b * np.sqrt(np.maximum(1.0 - (dist / r) ** 2, 0.0))
    return apex_z - (dist / r) * (apex_z - base_z)


def _sample_uls(spec: PlotSpec, trees: TreeSet, terrain: _Terrain,
                rng: np.random.Generator):
    half_x = spec.extent_x / 2 + spec.uls_margin
    half_y = spec.extent_y / 2 + spec.uls_margin
    count = max(1, round(spec.uls_density * 4.0 * half_x * half_y))
    xy = rng.uniform([-half_x, -half_y], [half_x, half_y], (count, 2))

    top = np.full(count, -np.inf)
    cover = np.zeros(count, dtype=np.int32)
    for i in range(len(trees)):
        delta = xy - trees.position[i]
        dist = np.hypot(delta[:, 0], delta[:, 1])
        inside = dist < trees.radius[i]
        if not np.any(inside):
            continue
        cover[inside] += 1
        surf = _upper_surface(trees, i, dist[inside])
        np.maximum(top[inside], surf, out=surf)
        top[inside] = surf

    ground_hit = rng.random(count) < PENETRATION ** cover
    depth_jitter = np.abs(rng.normal(0.0, 0.05, count))
    z = np.where(ground_hit, terrain.z(xy), top - depth_jitter)
    labels = np.where(ground_hit, np.int8(Label.GROUND),
                      np.int8(Label.VEGETATION))
    return np.column_stack([xy, z]), labels


def _sample_crown_surface(trees: TreeSet, idx: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """Ground-view crown returns: lower surface plus a partial upper band."""
    n = len(idx)
    base_z = trees.ground_z[idx] + trees.base[idx]
    apex_z = trees.ground_z[idx] + trees.height[idx]
    r = trees.radius[idx]
    azim = rng.uniform(0.0, 2.0 * math.pi, n)
    shrink = 1.0 - np.abs(rng.normal(0.0, 0.03, n))
    if trees.shape == "ellipsoid":
        center = (base_z + apex_z) / 2.0
        b = (apex_z - base_z) / 2.0
        zeta = rng.uniform(-1.0, ELLIPSOID_UPPER_BAND, n)
        dist = r * np.sqrt(np.maximum(1.0 - zeta ** 2, 0.0)) * shrink
        z = center + zeta * b
    else:
        on_base = rng.random(n) < CONE_BASE_SHARE
        zeta = rng.uniform(0.0, CONE_SIDE_FRACTION, n)
        dist = r * (1.0 - zeta) * shrink
        z = base_z + zeta * (apex_z - base_z)
        base_dist = r * np.sqrt(rng.random(n))
        dist = np.where(on_base, base_dist, dist)
        z = np.where(on_base, base_z, z)
    x = trees.position[idx, 0] + dist * np.cos(azim)
    y = trees.position[idx, 1] + dist * np.sin(azim)
    return np.column_stack([x, y, z])


def _sample_ground_system(spec: PlotSpec, trees: TreeSet, terrain: _Terrain,
                          rng: np.random.Generator):
    half_x, half_y = spec.extent_x / 2, spec.extent_y / 2
    count = max(1, round(spec.ground_density * spec.extent_x * spec.extent_y))
    n_terrain = round(count * GROUND_FRACTIONS[0])
    n_stem = round(count * GROUND_FRACTIONS[1])
    n_crown = count - n_terrain - n_stem

    xy = rng.uniform([-half_x, -half_y], [half_x, half_y], (n_terrain, 2))
    terrain_pts = np.column_stack([xy, terrain.z(xy)])

    core = np.flatnonzero(trees.in_core(spec.extent_x, spec.extent_y))
    if len(core) == 0:
        raise SpecError("no tree inside the ground plot")
    stem_idx = core[rng.integers(0, len(core), n_stem)]
    azim = rng.uniform(0.0, 2.0 * math.pi, n_stem)
    stem_xy = trees.position[stem_idx] + STEM_RADIUS * np.column_stack(
        [np.cos(azim), np.sin(azim)])
    stem_z = (trees.ground_z[stem_idx]
              + rng.uniform(STEM_MIN_HEIGHT, trees.base[stem_idx]))
    stem_pts = np.column_stack([stem_xy, stem_z])

    # Crowns whose silhouette reaches into the ground plot, sampled
    # proportionally to silhouette area, then clipped to the plot.
    visible = np.flatnonzero(
        (np.abs(trees.position[:, 0]) <= half_x + trees.radius)
        & (np.abs(trees.position[:, 1]) <= half_y + trees.radius))
    weights = trees.radius[visible] ** 2
    weights = weights / weights.sum()
    crown_idx = visible[rng.choice(len(visible), n_crown, p=weights)]
    crown_pts = _sample_crown_surface(trees, crown_idx, rng)
    keep = ((np.abs(crown_pts[:, 0]) <= half_x)
            & (np.abs(crown_pts[:, 1]) <= half_y))
    crown_pts = crown_pts[keep]

    points = np.vstack([terrain_pts, stem_pts, crown_pts])
    labels = np.concatenate([
        np.full(len(terrain_pts), Label.GROUND, dtype=np.int8),
        np.full(len(stem_pts), Label.VEGETATION, dtype=np.int8),
        np.full(len(crown_pts), Label.VEGETATION, dtype=np.int8),
    ])
    return points, labels


def _draw_truth(rng: np.random.Generator) -> RigidTransform:
    yaw = rng.uniform(0.0, 2.0 * math.pi)
    tilt_azimuth = rng.uniform(0.0, 2.0 * math.pi)
    tilt = rng.uniform(0.0, math.radians(5.0))
    rotation = rotation_z(yaw) @ rotation_about_axis(
        [math.cos(tilt_azimuth), math.sin(tilt_azimuth), 0.0], tilt)
    translation = np.array([rng.uniform(-10.0, 10.0),
                            rng.uniform(-10.0, 10.0),
                            rng.uniform(-2.0, 2.0)])
    return RigidTransform(rotation, translation)


def generate(spec: PlotSpec) -> GeneratedPlot:
    """Generate the plot; deterministic for a given spec (incl. seed)."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    terrain = _Terrain(spec, rng)
    trees = _build_trees(spec, terrain, rng)
    truth = spec.truth_transform if spec.truth_transform is not None \
        else _draw_truth(rng)

    uls_pts, uls_labels = _sample_uls(spec, trees, terrain, rng)
    ground_pts, ground_labels = _sample_ground_system(spec, trees, terrain, rng)

    if spec.noise_sigma > 0.0:
        uls_pts = uls_pts + rng.normal(0.0, spec.noise_sigma, uls_pts.shape)
        ground_pts = ground_pts + rng.normal(0.0, spec.noise_sigma,
                                             ground_pts.shape)

    ground_pts = apply_points(invert(truth), ground_pts)
    return GeneratedPlot(uls=PointCloud(uls_pts),
                         ground=PointCloud(ground_pts),
                         truth=truth, uls_labels=uls_labels,
                         ground_labels=ground_labels, trees=trees, spec=spec)


def feature_correspondences(plot: GeneratedPlot) -> np.ndarray:
    """(n, 2, 3) pairs of (aerial-frame apex, ground-frame apex) for the
    trees inside the ground plot; the oracle features for accuracy checks."""
    core = plot.trees.in_core(plot.spec.extent_x, plot.spec.extent_y)
    apex = plot.trees.apex[core]
    moved = apply_points(invert(plot.truth), apex)
    return np.stack([apex, moved], axis=1)


def realized_crown_density(trees: TreeSet, extent_x: float, extent_y: float,
                           resolution: float = 0.1) -> float:
    """Fraction of the core plot covered by crown silhouettes."""
    xs = np.arange(-extent_x / 2 + resolution / 2, extent_x / 2, resolution)
    ys = np.arange(-extent_y / 2 + resolution / 2, extent_y / 2, resolution)
    xx, yy = np.meshgrid(xs, ys)
    covered = np.zeros(xx.shape, dtype=bool)
    for i in range(len(trees)):
        d2 = ((xx - trees.position[i, 0]) ** 2
              + (yy - trees.position[i, 1]) ** 2)
        covered |= d2 < trees.radius[i] ** 2
    return float(covered.mean())


def table1_suite() -> list:
    """Six plot specs spanning the benchmark regimes: extents from
    20 x 15 to 40 x 32 m, stand densities 150-900 trees/ha, crown
    densities 0.39-0.96; the two densest plots use the three-quarters
    canopy cutoff and cone crowns."""
    fixed = CanopyHeightMode.fixed(3.0)
    tq = CanopyHeightMode.three_quarters()
    rows = [
        # extent_x, extent_y, margin, n/ha, crown density, shape, heights, regular?, mode
        (40.0, 32.0, 0.0, 150.0, 0.39, "ellipsoid", (14.0, 20.0), False, fixed),
        (25.0, 22.0, 7.5, 300.0, 0.74, "cone", (16.0, 23.0), False, fixed),
        (20.0, 15.0, 0.0, 900.0, 0.79, "cone", (11.0, 16.0), False, fixed),
        (30.0, 30.0, 10.0, 256.0, 0.76, "ellipsoid", (26.0, 36.0), True, fixed),
        (30.0, 30.0, 10.0, 489.0, 0.96, "cone", (25.0, 33.0), True, tq),
        (30.0, 30.0, 10.0, 578.0, 0.91, "cone", (19.0, 26.0), True, tq),
    ]
    specs = []
    for i, (ex, ey, margin, density, crown_density, shape, heights,
            regular, mode) in enumerate(rows):
        core_count = max(1, round(density * ex * ey / 1e4))
        spacing = math.sqrt(ex * ey / core_count)
        layout = (RegularJitter(spacing=spacing, jitter=0.3 * spacing)
                  if regular else PoissonDisk(min_dist=0.55 * spacing))
        specs.append(PlotSpec(
            extent_x=ex, extent_y=ey,
            terrain=TerrainSpec(tilt_deg=1.0 + 0.5 * i, undulation=0.15),
            stand_density=density, layout=layout,
            crown=CrownSpec(radius_range=(1.5, 3.2), height_range=heights,
                            shape=shape),
            crown_density_target=crown_density,
            uls_density=50.0, ground_density=500.0,
            noise_sigma=0.02, seed=101 + i, canopy_mode=mode,
            uls_margin=margin,
        ))
    return specs


# --- spec (de)serialization for the CLI ----------------------------------------


def plot_spec_to_dict(spec: PlotSpec) -> dict:
    if isinstance(spec.layout, RegularJitter):
        layout = {"kind": "regular_jitter", "spacing": spec.layout.spacing,
                  "jitter": spec.layout.jitter}
    else:
        layout = {"kind": "poisson_disk", "min_dist": spec.layout.min_dist}
    truth = None
    if spec.truth_transform is not None:
        truth = {"rotation": [float(x) for x in
                              spec.truth_transform.rotation.ravel()],
                 "translation": [float(x) for x in
                                 spec.truth_transform.translation]}
    return {
        "extent_x": spec.extent_x, "extent_y": spec.extent_y,
        "terrain": {"tilt_deg": spec.terrain.tilt_deg,
                    "undulation": spec.terrain.undulation},
        "stand_density": spec.stand_density,
        "layout": layout,
        "crown": {"radius_range": list(spec.crown.radius_range),
                  "height_range": list(spec.crown.height_range),
                  "shape": spec.crown.shape},
        "crown_density_target": spec.crown_density_target,
        "uls_density": spec.uls_density,
        "ground_density": spec.ground_density,
        "truth_transform": truth,
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        "canopy_mode": str(spec.canopy_mode),
        "uls_margin": spec.uls_margin,
    }


def plot_spec_from_dict(data: dict) -> PlotSpec:
    try:
        layout_data = data["layout"]
        if layout_data["kind"] == "regular_jitter":
            layout = RegularJitter(spacing=float(layout_data["spacing"]),
                                   jitter=float(layout_data["jitter"]))
        elif layout_data["kind"] == "poisson_disk":
            layout = PoissonDisk(min_dist=float(layout_data["min_dist"]))
        else:
            raise SpecError(f"unknown layout kind {layout_data['kind']!r}")
        truth = None
        if data.get("truth_transform") is not None:
            t = data["truth_transform"]
            truth = RigidTransform(
                np.array(t["rotation"], dtype=np.float64).reshape(3, 3),
                np.array(t["translation"], dtype=np.float64))
        return PlotSpec(
            extent_x=float(data["extent_x"]),
            extent_y=float(data["extent_y"]),
            terrain=TerrainSpec(
                tilt_deg=float(data.get("terrain", {}).get("tilt_deg", 0.0)),
                undulation=float(data.get("terrain", {}).get("undulation", 0.0))),
            stand_density=float(data["stand_density"]),
            layout=layout,
            crown=CrownSpec(
                radius_range=tuple(data["crown"]["radius_range"]),
                height_range=tuple(data["crown"]["height_range"]),
                shape=data["crown"].get("shape", "ellipsoid")),
            crown_density_target=float(data["crown_density_target"]),
            uls_density=float(data["uls_density"]),
            ground_density=float(data["ground_density"]),
            truth_transform=truth,
            noise_sigma=float(data.get("noise_sigma", 0.0)),
            seed=int(data.get("seed", 0)),
            canopy_mode=CanopyHeightMode.parse(
                data.get("canopy_mode", "fixed:3")),
            uls_margin=float(data.get("uls_margin", 0.0)),
        )
    except KeyError as exc:
        raise SpecError(f"plot spec missing key: {exc}") from exc


def with_seed(spec: PlotSpec, seed: int) -> PlotSpec:
    return replace(spec, seed=seed)
