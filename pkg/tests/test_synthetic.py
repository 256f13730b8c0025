import numpy as np
import pytest
from numpy.testing import assert_array_equal

from nfftgp.errors import ParameterError
from nfftgp.synthetic import SYNTHETIC_NAMES, make_synthetic


def test_disc_points_stay_in_radius():
    data = make_synthetic("discs", seed=1, n=400)
    radius = np.sqrt(400 / np.pi)
    for j in (0, 2, 4):
        assert np.hypot(data.X[:, j], data.X[:, j + 1]).max() <= radius
    assert np.abs(data.Y).max() <= 0.5
    assert data.windows.windows == ((0, 1), (2, 3), (4, 5))


def test_hypercube_side():
    data = make_synthetic("hypercube", seed=0, n=512)
    assert data.X.shape == (512, 6)
    assert data.X.min() >= 0 and data.X.max() <= 8.0


def test_sine_exp_labels_follow_the_formula():
    data = make_synthetic("sine_exp", seed=2, n=500)
    clean = np.sum(np.sin(2 * np.pi * data.X) * np.exp(data.X), axis=1) + np.sum(data.X ** 2, axis=1)
    residual = data.Y - clean
    assert abs(residual.std() - 0.1) < 0.02


def test_grf_split_sizes_and_seed():
    data = make_synthetic("grf1d", seed=4, n=200)
    X_tr, Y_tr, X_te, Y_te = data.split(seed=4)
    assert len(Y_tr) == 160 and len(Y_te) == 40
    again = make_synthetic("grf1d", seed=4, n=200)
    assert_array_equal(data.Y, again.Y)
    assert sorted(np.concatenate([Y_tr, Y_te])) == sorted(data.Y)


def test_wide_grf_uses_two_windows():
    data = make_synthetic("grf20d", seed=0, n=150)
    assert data.X.shape == (150, 20)
    assert data.windows.features == [0, 1, 2, 3, 4, 5]
    assert data.n_train == 120


def test_grf_labels_ignore_the_model_family():
    gauss = make_synthetic("grf1d", seed=4, n=200, family="gaussian")
    matern = make_synthetic("grf1d", seed=4, n=200, family="matern12")
    assert_array_equal(gauss.Y, matern.Y)
    wide = make_synthetic("grf20d", seed=2, n=100, family="matern12")
    assert_array_equal(wide.Y, make_synthetic("grf20d", seed=2, n=100).Y)


def test_unsplit_dataset_and_unknown_name():
    with pytest.raises(ParameterError):
        make_synthetic("hypercube", n=20).split()
    with pytest.raises(ParameterError):
        make_synthetic("moons")
    assert "grf1d" in SYNTHETIC_NAMES
