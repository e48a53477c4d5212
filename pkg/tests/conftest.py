import numpy as np
import pytest

from potr.fixture import make_fixture
from potr.rasterizer import render_targets


@pytest.fixture(scope="session")
def small_fixture():
    """Scaled-down benchmark scene shared by the slower unit tests."""
    return make_fixture(num_splats=1500, num_cameras=6, seed=3, resolution=48)


@pytest.fixture(scope="session")
def small_fixture_targets(small_fixture):
    splats, cams = small_fixture
    return render_targets(splats, cams, threads=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
