import numpy as np
import pytest

from nfftgp.kernels import FeatureWindows, HyperParams, KernelSpec


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def windows6():
    return FeatureWindows(((0, 1, 2), (3, 4, 5)))


@pytest.fixture
def cube_data(rng):
    """60 points in [0, 1]^6 with a smooth label."""
    X = rng.uniform(0.0, 1.0, size=(60, 6))
    Y = np.sin(3 * X[:, 0]) + X[:, 3] ** 2 + 0.05 * rng.standard_normal(60)
    return X, Y


@pytest.fixture
def gauss_spec(windows6):
    return KernelSpec("gaussian", windows6, HyperParams.from_values(0.7, 0.4, 0.3))


@pytest.fixture
def matern_spec(windows6):
    return KernelSpec("matern12", windows6, HyperParams.from_values(0.7, 0.4, 0.3))
