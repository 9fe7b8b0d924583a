"""Registration of aerial and ground forest LiDAR point clouds.

Coarse alignment splits into vertical alignment (leveling each cloud on
its RANSAC-fitted ground plane) and horizontal alignment (matching the
projected canopy binary images through contour-corner congruent pairs),
then ICP refines the composed transform.
"""

from .config import CanopyHeightMode, PlotConfig
from .geometry import (Label, Plane, PointCloud, RigidTransform, apply,
                       compose, invert, rotation_angle_between)
from .pipeline import (RegistrationReport, coarse_register, evaluate_rmse,
                       fine_register_icp, register)
from .synthetic import PlotSpec, generate, table1_suite

__all__ = [
    "CanopyHeightMode", "PlotConfig",
    "Label", "Plane", "PointCloud", "RigidTransform",
    "apply", "compose", "invert", "rotation_angle_between",
    "RegistrationReport", "coarse_register", "evaluate_rmse",
    "fine_register_icp", "register",
    "PlotSpec", "generate", "table1_suite",
]

__version__ = "0.1.0"
