import numpy as np
import pytest

from canopy_align.config import PlotConfig
from canopy_align.errors import DegenerateExtent
from canopy_align.geometry import Label, PointCloud
from canopy_align.ground_filter import classify_ground, settle_cloth
from canopy_align.synthetic import generate


def flat_grid(n_side=100, extent=20.0, z=0.0):
    xs = np.linspace(0, extent, n_side)
    xx, yy = np.meshgrid(xs, xs)
    pts = np.column_stack([xx.ravel(), yy.ravel(),
                           np.full(n_side * n_side, z)])
    return pts


def test_flat_plane_is_all_ground(default_cfg):
    cloud = PointCloud(flat_grid())
    labeled = classify_ground(cloud, default_cfg)
    assert np.all(labeled.labels == Label.GROUND)


def test_elevated_cluster_is_vegetation(default_cfg):
    ground = flat_grid()
    rng = np.random.default_rng(0)
    cluster = np.column_stack([rng.uniform(8, 12, 500),
                               rng.uniform(8, 12, 500),
                               np.full(500, 10.0)])
    cloud = PointCloud(np.vstack([ground, cluster]))
    labeled = classify_ground(cloud, default_cfg)
    ground_labels = labeled.labels[:len(ground)]
    cluster_labels = labeled.labels[len(ground):]
    assert np.all(cluster_labels == Label.VEGETATION)
    assert (ground_labels == Label.GROUND).mean() >= 0.99


def test_agreement_with_generator_labels(small_plot, default_cfg):
    for cloud, truth in ((small_plot.uls, small_plot.uls_labels),
                         (small_plot.ground, small_plot.ground_labels)):
        labeled = classify_ground(cloud, default_cfg)
        agreement = (labeled.labels == truth).mean()
        assert agreement >= 0.98


def test_settled_cloth_respects_targets(small_plot, default_cfg):
    cloth = settle_cloth(small_plot.ground.points, default_cfg)
    anchored = np.isfinite(cloth.target_height)
    gap = cloth.particle_height[anchored] - cloth.target_height[anchored]
    assert gap.min() >= -1e-9
    assert np.all(np.isfinite(cloth.particle_height))


def test_deterministic(default_cfg):
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 15, (5000, 3))
    pts[:, 2] *= 0.1
    cloud = PointCloud(pts)
    a = classify_ground(cloud, default_cfg)
    b = classify_ground(cloud, default_cfg)
    assert np.array_equal(a.labels, b.labels)


def test_relabeling_overwrites(default_cfg):
    cloud = PointCloud(flat_grid(),
                       labels=np.full(100 * 100, Label.VEGETATION, np.int8))
    labeled = classify_ground(cloud, default_cfg)
    assert np.all(labeled.labels == Label.GROUND)
    assert len(labeled.labels) == len(cloud)


def test_degenerate_extent(default_cfg):
    pts = np.column_stack([np.linspace(0, 0.2, 50),
                           np.linspace(0, 0.2, 50),
                           np.zeros(50)])
    with pytest.raises(DegenerateExtent):
        classify_ground(PointCloud(pts), default_cfg)


def test_sloped_terrain_follows(default_cfg):
    # 5 degree slope with canopy above: ground stays ground on the slope
    rng = np.random.default_rng(2)
    n = 20000
    xy = rng.uniform(0, 30, (n, 2))
    z = np.tan(np.radians(5.0)) * xy[:, 0]
    crowns = rng.random(n) < 0.3
    z = z + np.where(crowns, rng.uniform(8, 15, n), 0.0)
    cloud = PointCloud(np.column_stack([xy, z]))
    labeled = classify_ground(cloud, default_cfg)
    assert (labeled.labels[~crowns] == Label.GROUND).mean() >= 0.99
    assert (labeled.labels[crowns] == Label.VEGETATION).mean() >= 0.99
