import numpy as np
import pytest

from evrec import GaborBank, GaborConfig


@pytest.fixture(scope="session")
def bank() -> GaborBank:
    return GaborBank(GaborConfig())


@pytest.fixture(scope="session")
def small_bank() -> GaborBank:
    """Two scales, two orientations: cheap maps for structural tests."""
    return GaborBank(GaborConfig(scales=(3, 5), sigmas=(1.2, 2.0),
                                 lambdas=(1.5, 2.5),
                                 orientations_deg=(0.0, 90.0)))


def random_events(rng: np.random.Generator, n: int, width=32, height=32,
                  t_max_us=1_000_000):
    t = np.sort(rng.integers(0, t_max_us, n))
    x = rng.integers(0, width, n)
    y = rng.integers(0, height, n)
    p = rng.integers(0, 2, n)
    return t, x, y, p
