import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ref_landmarks():
    from faceenhance.geoembed import reference_landmarks
    return reference_landmarks()


@pytest.fixture(scope="session")
def ref_mesh(ref_landmarks):
    from faceenhance.geoembed import triangulate
    return triangulate(ref_landmarks)
