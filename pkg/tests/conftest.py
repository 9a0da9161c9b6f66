import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from diffeo2d import (
    Grid,
    RandomFieldSpec,
    RegistrationConfig,
    ScalarImage,
    exp_field,
    random_log_field,
)

GRID64 = Grid(64, 64)

# Optimizer settings used for all synthetic-suite registration checks; the
# dataclass defaults favor gentler smoothing, these favor recovery accuracy.
SUITE_REG_CONFIG = RegistrationConfig(
    step_size=0.45,
    iterations_per_level=300,
    update_smoothing_sigma=1.0,
    field_smoothing_sigma=0.0,
)


def suite_field(seed, amplitude=3.0, grid=GRID64, depth=6):
    """One synthetic-suite diffeomorphism with its exact logarithm."""
    v = random_log_field(RandomFieldSpec(grid, seed=seed, amplitude=amplitude))
    return v, exp_field(v, depth)


def textured_image(seed, grid=GRID64):
    """Smooth random texture in [0, 1]; gradients everywhere."""
    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.standard_normal(grid.shape), 2.0, mode="nearest")
    t = (t - t.min()) / (t.max() - t.min())
    return ScalarImage(grid, t)


def constant_field(grid, dr, dc):
    from diffeo2d import DisplacementField

    u = np.zeros((grid.height, grid.width, 2))
    u[..., 0] = dr
    u[..., 1] = dc
    return DisplacementField(grid, u)


@pytest.fixture(scope="session")
def grid64():
    return GRID64
