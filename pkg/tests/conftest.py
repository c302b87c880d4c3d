import numpy as np
import pytest

from unipc import NoiseSchedule, SyntheticModel


@pytest.fixture
def vp_linear():
    return NoiseSchedule()


@pytest.fixture
def vp_cosine():
    return NoiseSchedule.from_json({"kind": "vp-cosine"})


@pytest.fixture
def poly_model():
    """Degree-2 x-free model with the doc-example coefficients."""
    return SyntheticModel.x_free_poly([0.3, -1.2, 0.5], dim=4)


@pytest.fixture
def small_poly_model():
    """Degree-2 x-free model scaled so sampling errors stay inside the fit window."""
    return SyntheticModel.x_free_poly(np.array([0.3, -1.2, 0.5]) * 5e-4, dim=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
