"""Windowed Gaussian / Matern(1/2) kernels, their length-scale derivatives and dense oracles."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError, ShapeError

D_MAX = 3
DEFAULT_ORACLE_CAP = 5000
SOFTPLUS_LINEAR_ABOVE = 30.0


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    MATERN12 = "matern12"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower().replace("(", "").replace(")", "").replace("/", "")
        aliases = {"gaussian": cls.GAUSSIAN, "rbf": cls.GAUSSIAN, "g": cls.GAUSSIAN,
                   "matern12": cls.MATERN12, "matern": cls.MATERN12, "m": cls.MATERN12}
        if key not in aliases:
            raise ParameterError(f"unknown kernel family {value!r}")
        return aliases[key]


class Operator(str, Enum):
    K = "K"
    KHAT = "Khat"
    DELL = "dK/dell"
    DSIGMA_F = "dKhat/dsigma_f"
    DSIGMA_EPS = "dKhat/dsigma_eps"


# ---------------------------------------------------------
# softplus parametrisation
# ---------------------------------------------------------
def softplus(x):
    x = np.asarray(x, dtype=float)
    safe = np.minimum(x, SOFTPLUS_LINEAR_ABOVE)
    return np.where(x > SOFTPLUS_LINEAR_ABOVE, x, np.log1p(np.exp(safe)))


def softplus_grad(x):
    """d softplus / dx, the logistic sigmoid."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ParameterError("softplus only maps onto positive values")
    return np.where(y > SOFTPLUS_LINEAR_ABOVE, y, np.log(np.expm1(np.minimum(y, SOFTPLUS_LINEAR_ABOVE))))


@dataclass(frozen=True)
class HyperParams:
    """Raw optimizer variables and their softplus images (sigma_f, ell, sigma_eps)."""

    raw: tuple

    def __post_init__(self):
        raw = tuple(float(r) for r in self.raw)
        if len(raw) != 3:
            raise ShapeError(f"expected 3 raw hyperparameters, got {len(raw)}")
        if not all(np.isfinite(raw)):
            raise ParameterError(f"raw hyperparameters must be finite, got {raw}")
        vals = softplus(np.array(raw))
        if not np.all(vals > 0):
            raise ParameterError(f"softplus underflow for raw hyperparameters {raw}")
        object.__setattr__(self, "raw", raw)

    @classmethod
    def from_values(cls, sigma_f: float, ell: float, sigma_eps: float) -> "HyperParams":
        return cls(tuple(softplus_inverse([sigma_f, ell, sigma_eps])))

    @property
    def values(self) -> np.ndarray:
        return softplus(np.array(self.raw))

    @property
    def sigma_f(self) -> float:
        return float(self.values[0])

    @property
    def ell(self) -> float:
        return float(self.values[1])

    @property
    def sigma_eps(self) -> float:
        return float(self.values[2])

    def chain(self) -> np.ndarray:
        """d(sigma_f, ell, sigma_eps)/d raw, elementwise."""
        return softplus_grad(np.array(self.raw))


@dataclass(frozen=True)
class FeatureWindows:
    """Disjoint 0-based feature index groups W_1..W_P."""

    windows: tuple
    max_size: int = D_MAX

    def __post_init__(self):
        wins = tuple(tuple(int(i) for i in w) for w in self.windows)
        if not wins:
            raise ParameterError("at least one feature window is required")
        seen = set()
        for w in wins:
            if not 1 <= len(w) <= self.max_size:
                raise ParameterError(f"window {list(w)} has {len(w)} features, allowed 1..{self.max_size}")
            if min(w) < 0:
                raise ParameterError(f"window {list(w)} has a negative feature index")
            if seen.intersection(w) or len(set(w)) != len(w):
                raise ParameterError(f"window {list(w)} overlaps another window")
            seen.update(w)
        object.__setattr__(self, "windows", wins)

    @classmethod
    def single(cls, p: int) -> "FeatureWindows":
        """One window over all p features (the non-additive baseline)."""
        return cls(((*range(p),),), max_size=max(p, D_MAX))

    @property
    def P(self) -> int:
        return len(self.windows)

    @property
    def features(self) -> list:
        return [i for w in self.windows for i in w]

    def __iter__(self):
        return iter(self.windows)

    def __len__(self):
        return len(self.windows)

    def check_dim(self, p: int):
        if max(self.features) >= p:
            raise ShapeError(f"windows reference feature {max(self.features)} but data has {p} features")

    def one_based(self) -> list:
        return [[i + 1 for i in w] for w in self.windows]


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    windows: FeatureWindows
    params: HyperParams

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not isinstance(self.windows, FeatureWindows):
            object.__setattr__(self, "windows", FeatureWindows(self.windows))
        if not isinstance(self.params, HyperParams):
            raise ParameterError("params must be a HyperParams instance")

    def with_params(self, params: HyperParams) -> "KernelSpec":
        return KernelSpec(self.family, self.windows, params)


# ---------------------------------------------------------
# kernel values
# ---------------------------------------------------------
def _check_ell(ell):
    if not ell > 0:
        raise ParameterError(f"length scale must be positive, got {ell}")


def kernel_from_dist(family, dist, ell):
    """Sub-kernel value as a function of the Euclidean distance ||r||."""
    _check_ell(ell)
    dist = np.asarray(dist, dtype=float)
    if Family.parse(family) is Family.GAUSSIAN:
        return np.exp(-0.5 * (dist / ell) ** 2)
    return np.exp(-dist / ell)


def derivative_from_dist(family, dist, ell):
    """d/d ell of :func:`kernel_from_dist`."""
    _check_ell(ell)
    dist = np.asarray(dist, dtype=float)
    if Family.parse(family) is Family.GAUSSIAN:
        return dist ** 2 / ell ** 3 * np.exp(-0.5 * (dist / ell) ** 2)
    return dist / ell ** 2 * np.exp(-dist / ell)


def kernel_value(family, r, ell) -> float:
    return float(kernel_from_dist(family, np.linalg.norm(np.atleast_1d(r)), ell))


def derivative_kernel_value(family, r, ell) -> float:
    return float(derivative_from_dist(family, np.linalg.norm(np.atleast_1d(r)), ell))


def additive_kernel_entry(spec: KernelSpec, x_i, x_j) -> float:
    x_i, x_j = np.asarray(x_i, dtype=float), np.asarray(x_j, dtype=float)
    if x_i.shape != x_j.shape or x_i.ndim != 1:
        raise ShapeError(f"points must be 1-d vectors of equal length, got {x_i.shape} and {x_j.shape}")
    spec.windows.check_dim(x_i.size)
    total = sum(kernel_value(spec.family, x_i[list(w)] - x_j[list(w)], spec.params.ell)
                for w in spec.windows)
    return spec.params.sigma_f ** 2 * total


# ---------------------------------------------------------
# dense oracles
# ---------------------------------------------------------
def window_distances(X, Y, windows: FeatureWindows) -> list:
    """Per-window Euclidean distance matrices between the rows of X and Y."""
    return [cdist(X[:, list(w)], Y[:, list(w)]) for w in windows]


def summed_subkernels(family, X, Y, windows: FeatureWindows, ell, derivative=False) -> np.ndarray:
    """sum_s kappa_s(x^{W_s}, y^{W_s}) (or its ell-derivative), without sigma_f."""
    fn = derivative_from_dist if derivative else kernel_from_dist
    out = np.zeros((X.shape[0], Y.shape[0]))
    for dist in window_distances(X, Y, windows):
        out += fn(family, dist, ell)
    return out


def _check_data(X, spec, cap):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-d data matrix, got shape {X.shape}")
    spec.windows.check_dim(X.shape[1])
    if cap is not None and X.shape[0] > cap:
        raise ParameterError(f"dense oracle limited to {cap} points, got {X.shape[0]}")
    return X


def dense_matrix(spec: KernelSpec, X, operator=Operator.KHAT, cap: int | None = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Dense n x n matrix of K, Khat or one of its hyperparameter derivatives."""
    X = _check_data(X, spec, cap)
    op = Operator(operator)
    p = spec.params
    n = X.shape[0]
    if op is Operator.DSIGMA_EPS:
        return 2.0 * p.sigma_eps * np.eye(n)
    if op is Operator.DELL:
        return p.sigma_f ** 2 * summed_subkernels(spec.family, X, X, spec.windows, p.ell, derivative=True)
    S = summed_subkernels(spec.family, X, X, spec.windows, p.ell)
    if op is Operator.DSIGMA_F:
        return 2.0 * p.sigma_f * S
    K = p.sigma_f ** 2 * S
    if op is Operator.KHAT:
        K[np.diag_indices(n)] += p.sigma_eps ** 2
    return K


def cross_matrix(spec: KernelSpec, X_test, X_train, cap: int | None = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Rectangular K_{test,train} (no noise term)."""
    X_test = _check_data(X_test, spec, cap)
    X_train = _check_data(X_train, spec, cap)
    return spec.params.sigma_f ** 2 * summed_subkernels(spec.family, X_test, X_train, spec.windows, spec.params.ell)


def dense_neg_log_likelihood(spec: KernelSpec, X, Y, cap: int | None = DEFAULT_ORACLE_CAP) -> float:
    """Exact Z(theta) = 1/2 (Y^T Khat^-1 Y + log det Khat + n log 2 pi) via Cholesky."""
    from scipy.linalg import cho_factor, cho_solve

    K = dense_matrix(spec, X, Operator.KHAT, cap)
    Y = np.asarray(Y, dtype=float)
    factor = cho_factor(K, lower=True)
    alpha = cho_solve(factor, Y)
    logdet = 2.0 * np.log(np.diag(factor[0])).sum()
    return 0.5 * (Y @ alpha + logdet + Y.size * np.log(2.0 * np.pi))
