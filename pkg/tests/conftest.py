import numpy as np
import pytest

from citlab.core import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_linear_dataset(rng, n=200, p=5, beta=0.0):
    """Rows (x_0, z) with x_0 = z' eta + delta, y = beta x_0 + z' gamma + eps."""
    eta = rng.normal(0, 0.5, p - 1)
    gamma = rng.normal(0, 1.0, p - 1)
    z = rng.standard_normal((n, p - 1))
    x0 = z @ eta + rng.standard_normal(n)
    y = beta * x0 + z @ gamma + rng.standard_normal(n)
    return Dataset(x=np.column_stack([x0, z]), y=y), eta, gamma
