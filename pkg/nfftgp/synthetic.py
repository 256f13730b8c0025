"""Seeded synthetic datasets for the benchmark and training experiments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .io import rng_for
from .kernels import FeatureWindows
from .train import grf_sample

SYNTHETIC_NAMES = ("discs", "hypercube", "sine_exp", "grf1d", "grf20d")


@dataclass
class SyntheticDataset:
    name: str
    X: np.ndarray
    Y: np.ndarray
    windows: FeatureWindows
    n_train: int | None = None
    meta: dict = field(default_factory=dict)

    def split(self, seed: int = 0):
        """(X_train, Y_train, X_test, Y_test) from a seeded random permutation."""
        if self.n_train is None:
            raise ParameterError(f"dataset {self.name!r} has no train/test split")
        order = rng_for(seed, "split").permutation(len(self.Y))
        tr, te = order[:self.n_train], order[self.n_train:]
        return self.X[tr], self.Y[tr], self.X[te], self.Y[te]


def _disc(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    t = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def disc_points(seed: int = 0, n: int = 1000) -> SyntheticDataset:
    """Three 2-D windows, each uniform in a disc of radius sqrt(n/pi); labels are a uniform rhs."""
    rng = rng_for(seed, "synthetic")
    radius = np.sqrt(n / np.pi)
    X = np.hstack([_disc(rng, n, radius) for _ in range(3)])
    Y = rng.uniform(-0.5, 0.5, n)
    windows = FeatureWindows(((0, 1), (2, 3), (4, 5)))
    return SyntheticDataset("discs", X, Y, windows, meta=dict(sigma_f2=1 / 3, sigma_eps2=0.01))


def hypercube_points(seed: int = 0, n: int = 3000) -> SyntheticDataset:
    """n points uniform in a 6-D hypercube of side n^(1/3); labels are a uniform rhs."""
    rng = rng_for(seed, "synthetic")
    X = rng.uniform(0.0, n ** (1.0 / 3.0), size=(n, 6))
    Y = rng.uniform(-0.5, 0.5, n)
    windows = FeatureWindows(((0, 1, 2), (3, 4, 5)))
    return SyntheticDataset("hypercube", X, Y, windows, meta=dict(sigma_f2=0.5, sigma_eps2=0.01))


def sine_exp_labels(seed: int = 0, n: int = 3000) -> SyntheticDataset:
    """y = sin(2 pi x)^T exp(x) + ||x||^2 + eps on [0, 1]^6, eps ~ N(0, 0.01)."""
    rng = rng_for(seed, "synthetic")
    X = rng.uniform(0.0, 1.0, size=(n, 6))
    Y = np.sum(np.sin(2 * np.pi * X) * np.exp(X), axis=1) + np.sum(X ** 2, axis=1) \
        + rng.normal(0.0, 0.1, n)
    windows = FeatureWindows(((0, 1, 2), (3, 4, 5)))
    return SyntheticDataset("sine_exp", X, Y, windows, meta=dict(sigma_f2=0.5, sigma_eps2=1.0, ell=2.0))


def grf_1d(seed: int = 0, n: int = 1000, family: str = "gaussian") -> SyntheticDataset:
    """1-D Gaussian random field labels, sigma_f^2 = 1, ell = 0.1, sigma_eps^2 = 0.01; 800/200 split.

    Labels always come from the Gaussian covariance; ``family`` only records
    which model the dataset is meant for.
    """
    rng = rng_for(seed, "synthetic")
    X = rng.uniform(0.0, 1.0, size=(n, 1))
    windows = FeatureWindows(((0,),))
    Y = grf_sample(X, "gaussian", 1.0, 0.1, 0.1, windows=windows, rng=rng)
    return SyntheticDataset("grf1d", X, Y, windows, n_train=int(0.8 * n),
                            meta=dict(sigma_f2=1.0, ell=0.1, sigma_eps2=0.01, family=family))


def grf_20d(seed: int = 0, n: int = 3000, family: str = "gaussian") -> SyntheticDataset:
    """20 standard normal features; GRF labels from an additive Gaussian kernel on features 1-3 and 4-6."""
    rng = rng_for(seed, "synthetic")
    X = rng.standard_normal((n, 20))
    windows = FeatureWindows(((0, 1, 2), (3, 4, 5)))
    Y = grf_sample(X, "gaussian", np.sqrt(0.5), 1.0, 0.01, windows=windows, rng=rng)
    return SyntheticDataset("grf20d", X, Y, windows, n_train=int(0.8 * n),
                            meta=dict(sigma_f2=0.5, ell=1.0, sigma_eps2=1e-4, family=family))


GENERATORS = {"discs": disc_points, "hypercube": hypercube_points, "sine_exp": sine_exp_labels,
              "grf1d": grf_1d, "grf20d": grf_20d}


def make_synthetic(name: str, seed: int = 0, **kwargs) -> SyntheticDataset:
    if name not in GENERATORS:
        raise ParameterError(f"unknown synthetic dataset {name!r}; choose from {SYNTHETIC_NAMES}")
    return GENERATORS[name](seed=seed, **kwargs)
