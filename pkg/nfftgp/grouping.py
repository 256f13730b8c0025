"""Feature windows from mutual-information scores or elastic-net coefficients."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import mutual_info_score
from sklearn.preprocessing import KBinsDiscretizer, StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ParameterError, ShapeError
from .kernels import D_MAX, FeatureWindows

log = logging.getLogger(__name__)

EN_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class FeatureScores:
    """Per-feature relevance and the descending ranking (ties by ascending index)."""

    scores: np.ndarray
    kind: str = "mis"

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ShapeError(f"scores must be a nonempty vector, got shape {s.shape}")
        if self.kind not in ("mis", "en"):
            raise ParameterError(f"unknown score kind {self.kind!r}")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def ranking(self) -> np.ndarray:
        return np.argsort(-self.scores, kind="stable")

    def __len__(self):
        return self.scores.size


# ---------------------------------------------------------
# mutual information
# ---------------------------------------------------------
def quantile_codes(values, n_bins: int) -> np.ndarray:
    """Equal-frequency bin codes of one column; constant columns land in bin 0."""
    col = np.asarray(values, dtype=float).reshape(-1, 1)
    if np.ptp(col) == 0:
        return np.zeros(col.shape[0], dtype=int)
    disc = KBinsDiscretizer(n_bins=n_bins, encode="ordinal", strategy="quantile")
    with warnings.catch_warnings():
        # duplicate quantile edges are merged by sklearn; tied data is expected here
        warnings.simplefilter("ignore", UserWarning)
        warnings.simplefilter("ignore", FutureWarning)
        codes = disc.fit_transform(col)
    return codes.ravel().astype(int)


def mis_scores(X, y, n_bins: int = 16) -> FeatureScores:
    """Plug-in MI (nats) between each quantile-binned feature and the binned label."""
    X, y = check_X_y(X, y, y_numeric=True)
    if X.shape[0] < 2:
        raise ShapeError("mutual information needs at least 2 samples")
    if n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {n_bins}")
    if np.ptp(y) == 0:
        warnings.warn("label vector is constant; all mutual information scores are 0", UserWarning)
        return FeatureScores(np.zeros(X.shape[1]), kind="mis")
    y_codes = quantile_codes(y, n_bins)
    scores = np.array([mutual_info_score(quantile_codes(X[:, j], n_bins), y_codes)
                       for j in range(X.shape[1])])
    return FeatureScores(np.maximum(scores, 0.0), kind="mis")


# ---------------------------------------------------------
# elastic net
# ---------------------------------------------------------
def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def elastic_net_objective(w, Xs, yc, lambda_en, rho) -> float:
    r = yc - Xs @ w
    n = Xs.shape[0]
    return (r @ r / (2.0 * n) + lambda_en * rho * np.abs(w).sum()
            + 0.5 * lambda_en * (1.0 - rho) * (w @ w))


class ElasticNetCD(BaseEstimator, RegressorMixin):
    """Cyclic coordinate descent for the elastic net on standardized features.

    Minimizes (1/2n)||Xw - y||^2 + lambda*rho*||w||_1 + (lambda*(1-rho)/2)||w||_2^2
    with X standardized and y centred. ``coef_`` is on the standardized scale.
    """

    def __init__(self, lambda_en=0.01, rho=1.0, max_sweeps=1000, tol=1e-6):
        self.lambda_en = lambda_en
        self.rho = rho
        self.max_sweeps = max_sweeps
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.lambda_en < 0:
            raise ParameterError(f"lambda_en must be >= 0, got {self.lambda_en}")
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho}")
        n, p = X.shape
        self.scaler_ = StandardScaler().fit(X)
        Xs = self.scaler_.transform(X)
        self.y_mean_ = float(y.mean())
        yc = y - self.y_mean_

        l1 = self.lambda_en * self.rho
        l2 = self.lambda_en * (1.0 - self.rho)
        col_sq = (Xs ** 2).sum(axis=0) / n
        w = np.zeros(p)
        r = yc.copy()
        history = [elastic_net_objective(w, Xs, yc, self.lambda_en, self.rho)]
        converged = False
        sweep, max_change = 0, 0.0
        for sweep in range(1, self.max_sweeps + 1):
            max_change = 0.0
            for j in range(p):
                denom = col_sq[j] + l2
                if denom == 0.0:
                    continue
                old = w[j]
                rho_j = Xs[:, j] @ r / n + col_sq[j] * old
                new = soft_threshold(rho_j, l1) / denom
                if new != old:
                    r -= Xs[:, j] * (new - old)
                    w[j] = new
                    max_change = max(max_change, abs(new - old))
            history.append(elastic_net_objective(w, Xs, yc, self.lambda_en, self.rho))
            if max_change < self.tol:
                converged = True
                break
        self.coef_ = w
        self.n_iter_ = sweep
        self.objective_history_ = np.array(history)
        self.converged_ = converged
        if not converged:
            warnings.warn(f"elastic net did not converge in {self.max_sweeps} sweeps "
                          f"(last max change {max_change:.3g})", ConvergenceWarning)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self.scaler_.transform(X) @ self.coef_ + self.y_mean_


def elastic_net(X, y, lambda_en: float = 0.01, rho: float = 1.0, max_sweeps: int = 1000,
                tol: float = 1e-6) -> np.ndarray:
    return ElasticNetCD(lambda_en, rho, max_sweeps, tol).fit(X, y).coef_


def en_scores(X, y, lambda_en: float = 0.01, rho: float = 1.0, max_sweeps: int = 1000,
              tol: float = 1e-6) -> FeatureScores:
    return FeatureScores(np.abs(elastic_net(X, y, lambda_en, rho, max_sweeps, tol)), kind="en")


# ---------------------------------------------------------
# windows
# ---------------------------------------------------------
def build_windows(scores: FeatureScores, thres: float | None = None, d_ratio: float | None = None,
                  d_target: int | None = None, d_max: int = D_MAX) -> FeatureWindows:
    """Keep features by one policy, then chunk the ranked survivors into windows of d_max."""
    policies = {"thres": thres, "d_ratio": d_ratio, "d_target": d_target}
    given = [k for k, v in policies.items() if v is not None]
    if len(given) != 1:
        raise ParameterError(f"exactly one of thres, d_ratio, d_target must be set, got {given or 'none'}")
    if d_max < 1:
        raise ParameterError(f"d_max must be >= 1, got {d_max}")

    ranked = scores.ranking
    p = len(scores)
    if thres is not None:
        if not thres > 0:
            raise ParameterError(f"thres must be positive, got {thres}")
        kept = [j for j in ranked if scores.scores[j] >= thres]
    elif d_ratio is not None:
        if not 0 < d_ratio <= 1:
            raise ParameterError(f"d_ratio must lie in (0, 1], got {d_ratio}")
        kept = list(ranked[:math.ceil(d_ratio * p - 1e-12)])
    else:
        if int(d_target) != d_target or d_target < 1:
            raise ParameterError(f"d_target must be a positive integer, got {d_target}")
        kept = list(ranked[:int(d_target)])

    if scores.kind == "en":
        kept = [j for j in kept if scores.scores[j] >= EN_ZERO_TOL]
    if not kept:
        raise ParameterError("feature selection retained no features")
    windows = tuple(tuple(int(j) for j in kept[i:i + d_max]) for i in range(0, len(kept), d_max))
    log.info("built %d windows from %d of %d features", len(windows), len(kept), p)
    return FeatureWindows(windows, max_size=max(d_max, D_MAX))


class WindowSelector(BaseEstimator, TransformerMixin):
    """Scores features on (a subsample of) the data and keeps the columns of the selected windows.

    After ``fit``: ``scores_`` (FeatureScores) and ``windows_`` (FeatureWindows,
    0-based column indices into the fitted X).
    """

    def __init__(self, method="mis", n_bins=16, lambda_en=0.01, rho=1.0, thres=None, d_ratio=None,
                 d_target=None, subsample=1000, random_state=0):
        self.method = method
        self.n_bins = n_bins
        self.lambda_en = lambda_en
        self.rho = rho
        self.thres = thres
        self.d_ratio = d_ratio
        self.d_target = d_target
        self.subsample = subsample
        self.random_state = random_state

    def fit(self, X, y):
        from .io import rng_for

        X, y = check_X_y(X, y, y_numeric=True)
        if self.subsample is not None and X.shape[0] > self.subsample:
            rng = rng_for(self.random_state, "grouping")
            rows = np.sort(rng.choice(X.shape[0], size=int(self.subsample), replace=False))
            X, y = X[rows], y[rows]
        if self.method == "mis":
            self.scores_ = mis_scores(X, y, self.n_bins)
        elif self.method == "en":
            self.scores_ = en_scores(X, y, self.lambda_en, self.rho)
        else:
            raise ParameterError(f"method must be 'mis' or 'en', got {self.method!r}")
        self.windows_ = build_windows(self.scores_, self.thres, self.d_ratio, self.d_target)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "windows_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X[:, self.windows_.features]
