from pathlib import Path

import numpy as np
import pytest

from fibertrack.field import Box, EstimatorConfig, ObservationSet
from fibertrack.sim import SyntheticScenario, circular

SCENARIOS = Path(__file__).parent.parent / "scenarios"


def grid_design(half_width: float, spacing: float) -> np.ndarray:
    """Cell centres of a square grid on [-w, w]², symmetric about the origin."""
    count = int(round(2 * half_width / spacing))
    axis = -half_width + spacing * (np.arange(count) + 0.5)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


@pytest.fixture
def unit_box() -> Box:
    return Box(lower=(0.0, 0.0), upper=(1.0, 1.0))


@pytest.fixture
def circle_box() -> Box:
    return Box.cube(2.0)


@pytest.fixture
def circle_scenario(circle_box) -> SyntheticScenario:
    return SyntheticScenario(field=circular(), domain=circle_box, n=322, noise_scale=0.5, seed=2)


@pytest.fixture
def random_obs(circle_box) -> ObservationSet:
    rng = np.random.default_rng(7)
    points = rng.uniform(-2, 2, size=(60, 2))
    values = rng.normal(size=(60, 2))
    return ObservationSet.from_arrays(points, values, circle_box)


@pytest.fixture
def constant_grid_obs() -> ObservationSet:
    """V_i ≡ e₁ on the cell centres of [-3, 3]² at spacing 0.1."""
    points = grid_design(3.0, 0.1)
    values = np.tile([1.0, 0.0], (len(points), 1))
    return ObservationSet.from_arrays(points, values, Box.cube(3.0))


@pytest.fixture
def est_03() -> EstimatorConfig:
    return EstimatorConfig(h=0.3, h_tilde=0.3)


@pytest.fixture
def scenarios_dir() -> Path:
    return SCENARIOS
