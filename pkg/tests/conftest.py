import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_homography(rng, scale=0.1, persp=1e-3):
    """Well-conditioned random homography near identity."""
    h = np.eye(3) + rng.uniform(-scale, scale, (3, 3))
    h[0, 2], h[1, 2] = rng.uniform(-20, 20, 2)
    h[2, :2] = rng.uniform(-persp, persp, 2)
    h[2, 2] = 1.0
    return h
