"""Pipeline configuration with the published default parameter values."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import BadValue


@dataclass(frozen=True)
class CanopyHeightMode:
    """Canopy selection cutoff: a fixed height above ground, or three
    quarters of the plot's total elevation range (for dense crowns)."""

    kind: str  # "fixed" | "three_quarters"
    height: float = 3.0

    @staticmethod
    def fixed(height: float = 3.0) -> "CanopyHeightMode":
        return CanopyHeightMode("fixed", height)

    @staticmethod
    def three_quarters() -> "CanopyHeightMode":
        return CanopyHeightMode("three_quarters", 0.0)

    @staticmethod
    def parse(text: str) -> "CanopyHeightMode":
        text = text.strip().lower()
        if text == "three_quarters":
            return CanopyHeightMode.three_quarters()
        if text == "fixed":
            return CanopyHeightMode.fixed()
        if text.startswith("fixed:"):
            try:
                return CanopyHeightMode.fixed(float(text.split(":", 1)[1]))
            except ValueError as exc:
                raise BadValue(f"bad canopy height: {text!r}") from exc
        raise BadValue(f"canopy_height_mode must be 'fixed', 'fixed:<m>' or "
                       f"'three_quarters', got {text!r}")

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.height:g}"
        return self.kind


@dataclass(frozen=True)
class PlotConfig:
    """All tunables of the registration pipeline.

    Defaults follow the published parameterization: 0.1 m projection
    resolution, 5 px morphology/median kernels, 5 px keypoint radius,
    response constant 0.05, 5 px pair separation and congruence
    tolerances, 10 px overlap cells, and cloth filtering at 0.5 m
    resolution / 500 iterations / 0.5 m classification threshold.
    """

    projection_resolution: float = 0.1
    canopy_height_mode: CanopyHeightMode = field(
        default_factory=lambda: CanopyHeightMode.fixed(3.0))
    morphology_kernel: int = 5
    median_kernel: int = 5
    keypoint_radius: float = 5.0
    harris_alpha: float = 0.05
    keypoint_rel_threshold: float = 0.01
    keypoint_nms_radius: float = 3.0
    keypoint_max_count: int = 200
    pair_min_separation: float = 5.0
    congruence_tolerance: float = 5.0
    pair_cap: int = 20000
    max_candidates: int = 100000
    match_accept_threshold: float = 0.5
    match_early_exit: float = 0.99
    overlap_cell: int = 10
    cloth_resolution: float = 0.5
    cloth_max_iter: int = 500
    cloth_class_threshold: float = 0.5
    ransac_iterations: int = 200
    ransac_inlier_tol: float = 0.05
    icp_max_iter: int = 50
    icp_convergence_tol: float = 1e-4
    icp_max_correspondence: float = 1.0
    icp_subsample: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        positive = [
            "projection_resolution", "keypoint_radius", "pair_min_separation",
            "congruence_tolerance", "cloth_resolution", "cloth_class_threshold",
            "ransac_inlier_tol", "icp_max_correspondence", "icp_subsample",
            "keypoint_nms_radius",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise BadValue(f"{name} must be > 0")
        for name in ("morphology_kernel", "median_kernel", "overlap_cell"):
            value = getattr(self, name)
            if value < 1:
                raise BadValue(f"{name} must be >= 1")
        for name in ("morphology_kernel", "median_kernel"):
            if getattr(self, name) % 2 == 0:
                raise BadValue(f"{name} must be odd")
        if not 0.0 < self.harris_alpha < 0.25:
            raise BadValue("harris_alpha must be in (0, 0.25)")
        if self.canopy_height_mode.kind == "fixed" and self.canopy_height_mode.height <= 0:
            raise BadValue("fixed canopy height must be > 0")
        for name in ("cloth_max_iter", "ransac_iterations", "icp_max_iter",
                     "keypoint_max_count", "pair_cap", "max_candidates"):
            if getattr(self, name) < 0:
                raise BadValue(f"{name} must be >= 0")


_FIELD_TYPES = {f.name: f.type for f in fields(PlotConfig)}


def config_field_names() -> tuple:
    return tuple(_FIELD_TYPES)
