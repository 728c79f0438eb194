import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def small_dataset():
    from advface.synthface import generate_dataset

    return generate_dataset(3, 3, 64, seed=5)


@pytest.fixture(scope="session")
def default_model():
    from advface.featnet import default_network

    return default_network(0)


def random_landmarks(rng: np.random.Generator, size: int):
    """A valid LandmarkSet with simple rectangular masks on a size x size image."""
    from advface.imagecore import Point, Polygon
    from advface.synthface import LandmarkSet

    hi = size - 1
    eye_y = int(rng.integers(size // 4, size // 2))
    x_le = int(rng.integers(2, size // 2 - 4))
    x_re = int(rng.integers(size // 2 + 2, size - 3))
    top = int(rng.integers(1, eye_y)) if eye_y > 1 else 0
    forehead = Polygon([(2, top), (hi - 2, top), (hi - 2, eye_y), (2, eye_y)])
    beard_top = int(rng.integers(size // 2 + 2, size - 4))
    beard = Polygon([(3, beard_top), (hi - 3, beard_top),
                     (hi - 3, hi - 1), (3, hi - 1)])
    return LandmarkSet(
        left_eye=Point(x_le, eye_y),
        right_eye=Point(x_re, eye_y),
        nose=Point(size // 2, min(eye_y + 5, hi)),
        mouth_center=Point(size // 2, min(eye_y + 10, hi)),
        forehead_polygon=forehead,
        beard_polygon=beard,
    )
