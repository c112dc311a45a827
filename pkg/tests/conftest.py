import numpy as np
import pytest

from camera_manifold.manifold_range import RangeParabolas, default_range
from camera_manifold.synthetic import make_dataset, synthetic_head

PUBLISHED = RangeParabolas(-0.024, 20.0, 0.010, -14.6)


@pytest.fixture(scope="session")
def published_range():
    return PUBLISHED


@pytest.fixture(scope="session")
def head():
    return synthetic_head()


@pytest.fixture(scope="session")
def dataset():
    return make_dataset(8, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_report_header(config):
    r = default_range()
    return f"default range: a_u={r.a_u} b_u={r.b_u} a_l={r.a_l} b_l={r.b_l}"
