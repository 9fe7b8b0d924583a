import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from canopy_align import _kernels  # noqa: E402
from canopy_align import pipeline, synthetic  # noqa: E402
from canopy_align.config import PlotConfig  # noqa: E402

# Compile (or cache-load) the numba kernels before any timed test runs.
_kernels.warm_up()


@pytest.fixture(scope="session")
def default_cfg():
    return PlotConfig()


@pytest.fixture(scope="session")
def small_plot():
    """A light plot for unit tests: quick to generate and register."""
    spec = synthetic.PlotSpec(
        extent_x=24.0, extent_y=20.0,
        terrain=synthetic.TerrainSpec(tilt_deg=2.0, undulation=0.1),
        stand_density=350.0,
        layout=synthetic.PoissonDisk(min_dist=2.2),
        crown=synthetic.CrownSpec(radius_range=(1.4, 2.6),
                                  height_range=(12.0, 18.0)),
        crown_density_target=0.55,
        uls_density=30.0, ground_density=220.0,
        noise_sigma=0.01, seed=42,
    )
    return synthetic.generate(spec)


class Table1Results:
    """Lazily generated and coarse-registered benchmark plots."""

    def __init__(self):
        self.specs = synthetic.table1_suite()
        self._results = {}

    def run(self, index: int, mode=None, noise=None):
        key = (index, str(mode), noise)
        if key not in self._results:
            spec = self.specs[index]
            if mode is not None:
                spec = replace(spec, canopy_mode=mode)
            if noise is not None:
                spec = replace(spec, noise_sigma=noise)
            t0 = time.perf_counter()
            plot = synthetic.generate(spec)
            gen_seconds = time.perf_counter() - t0

            cfg = replace(PlotConfig(), canopy_height_mode=spec.canopy_mode)
            t0 = time.perf_counter()
            coarse, diag = pipeline.coarse_register(plot.uls, plot.ground, cfg)
            reg_seconds = time.perf_counter() - t0
            self._results[key] = {
                "plot": plot, "cfg": cfg, "coarse": coarse, "diag": diag,
                "gen_seconds": gen_seconds, "reg_seconds": reg_seconds,
            }
        return self._results[key]


@pytest.fixture(scope="session")
def table1_results():
    return Table1Results()
