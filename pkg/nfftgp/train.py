"""Hyperparameter training with Adam and posterior prediction."""
from __future__ import annotations

import dataclasses
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg as sla
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import precond
from .errors import ParameterError, ShapeError, SolverError
from .fastsum import BACKENDS, DEFAULT_MAX_GRID, AdditiveMatvecEngine, scale_windows
from .grouping import WindowSelector
from .kernels import (DEFAULT_ORACLE_CAP, Family, FeatureWindows, HyperParams, KernelSpec, Operator,
                      softplus_inverse, summed_subkernels)
from .krylov import ProbeSet, SolverBudget, loss_and_grad, pcg

log = logging.getLogger(__name__)

WINDOW_SOURCES = ("file", "mis", "en", "all")
SIGMA_F_MODES = ("trained", "fixed")
Z95 = 1.96
GRF_JITTER = 1e-10


@dataclass(frozen=True)
class TrainConfig:
    family: str = "gaussian"
    backend: str = "nfft"
    m: int = 32
    sigma_over: float = 2.0
    window_support: int = 8
    table_tol: float | None = 1e-4
    max_grid: int = DEFAULT_MAX_GRID
    window_source: str = "file"
    windows_file: str | None = None
    windows: tuple | None = None
    thres: float | None = None
    d_ratio: float | None = None
    d_target: int | None = None
    n_bins: int = 16
    lambda_en: float = 0.01
    rho: float = 1.0
    group_subsample: int = 1000
    lr: float = 0.01
    max_iter: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_probes: int = 10
    lanczos_steps: int = 10
    cg_iters: int = 10
    cg_tol: float = 1e-10
    predict_cg_iters: int = 50
    predict_cg_tol: float = 1e-10
    landmarks_per_window: int = 10
    fill: int = 100
    rebuild_every: int = 1
    sigma_f_mode: str = "trained"
    seed: int = 0
    oracle_cap: int = DEFAULT_ORACLE_CAP
    n_jobs: int = 1
    log_every: int = 10
    init_raw: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family).value)
        if self.backend not in BACKENDS:
            raise ParameterError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.window_source not in WINDOW_SOURCES:
            raise ParameterError(f"window_source must be one of {WINDOW_SOURCES}, got {self.window_source!r}")
        if self.sigma_f_mode not in SIGMA_F_MODES:
            raise ParameterError(f"sigma_f_mode must be one of {SIGMA_F_MODES}, got {self.sigma_f_mode!r}")
        positive = ("m", "window_support", "n_bins", "group_subsample", "n_probes", "lanczos_steps",
                    "cg_iters", "predict_cg_iters", "landmarks_per_window", "fill", "rebuild_every",
                    "log_every", "oracle_cap", "max_grid")
        for name in positive:
            if not getattr(self, name) >= 1:
                raise ParameterError(f"{name} must be a positive count, got {getattr(self, name)}")
        if self.table_tol is not None and not self.table_tol > 0:
            raise ParameterError(f"table_tol must be positive or none, got {self.table_tol}")
        if self.max_iter < 0:
            raise ParameterError(f"max_iter must be >= 0, got {self.max_iter}")
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("Adam decay rates must lie in [0, 1)")
        if len(self.init_raw) != 3:
            raise ParameterError(f"init_raw needs 3 values, got {self.init_raw}")
        if self.windows is not None:
            object.__setattr__(self, "windows", tuple(tuple(int(i) for i in w) for w in self.windows))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def budget(self, prediction: bool = False) -> SolverBudget:
        if prediction:
            return SolverBudget(self.predict_cg_iters, self.predict_cg_tol, self.lanczos_steps, self.n_jobs)
        return SolverBudget(self.cg_iters, self.cg_tol, self.lanczos_steps, self.n_jobs)

    def engine(self, spec: KernelSpec, X, scaling=None) -> AdditiveMatvecEngine:
        return AdditiveMatvecEngine(spec, X, backend=self.backend, m=self.m, sigma_over=self.sigma_over,
                                    s=self.window_support, scaling=scaling, n_jobs=self.n_jobs,
                                    cap=self.oracle_cap, table_tol=self.table_tol, max_grid=self.max_grid)


@dataclass
class TrainTrace:
    raw: list = field(default_factory=list)
    values: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, params: HyperParams, loss: float, grad_norm: float, seconds: float):
        self.raw.append(params.raw)
        self.values.append(tuple(params.values))
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))
        self.seconds.append(float(seconds))

    def __len__(self):
        return len(self.loss)

    def to_frame(self) -> pd.DataFrame:
        raw = np.array(self.raw, dtype=float).reshape(-1, 3)
        vals = np.array(self.values, dtype=float).reshape(-1, 3)
        return pd.DataFrame({
            "iter": np.arange(len(self), dtype=int),
            "raw_sigma_f": raw[:, 0], "raw_ell": raw[:, 1], "raw_sigma_eps": raw[:, 2],
            "sigma_f": vals[:, 0], "ell": vals[:, 1], "sigma_eps": vals[:, 2],
            "loss": self.loss, "grad_norm": self.grad_norm, "seconds": self.seconds,
        })


class Adam:
    """Adam on a flat parameter vector; ``step`` updates it in place."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grads * grads)
        params -= (self.lr / bc1) * self.m / (np.sqrt(self.v / bc2) + self.eps)
        return params


# ---------------------------------------------------------
# windows and initial values
# ---------------------------------------------------------
def resolve_windows(X, Y, config: TrainConfig) -> FeatureWindows:
    p = X.shape[1]
    if config.windows is not None:
        windows = FeatureWindows(config.windows)
    elif config.window_source == "all":
        if config.backend != "exact":
            raise ParameterError("window_source 'all' (one kernel over every feature) needs backend 'exact'")
        windows = FeatureWindows.single(p)
    elif config.window_source in ("mis", "en"):
        selector = WindowSelector(method=config.window_source, n_bins=config.n_bins,
                                  lambda_en=config.lambda_en, rho=config.rho, thres=config.thres,
                                  d_ratio=config.d_ratio, d_target=config.d_target,
                                  subsample=config.group_subsample, random_state=config.seed)
        windows = selector.fit(X, Y).windows_
    elif config.windows_file:
        from .io import read_windows_file

        windows = read_windows_file(config.windows_file)
    elif p <= 3:
        windows = FeatureWindows((tuple(range(p)),))
    else:
        raise ParameterError(f"{p} features need a windows file or window_source mis/en/all")
    windows.check_dim(p)
    return windows


def initial_params(config: TrainConfig, P: int) -> HyperParams:
    raw = list(config.init_raw)
    if config.sigma_f_mode == "fixed":
        raw[0] = float(softplus_inverse(1.0 / np.sqrt(P)))
    return HyperParams(tuple(raw))


def _check_xy(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.shape != (X.shape[0],):
        raise ShapeError(f"expected X of shape (n, p) and Y of shape (n,), got {X.shape} and {Y.shape}")
    return X, Y


# ---------------------------------------------------------
# training
# ---------------------------------------------------------
def adam_fit(X, Y, config: TrainConfig = TrainConfig(), windows: FeatureWindows | None = None,
             probes: ProbeSet | None = None):
    """Minimize the estimated negative log marginal likelihood over the raw hyperparameters.

    Returns the final HyperParams and the TrainTrace. A solver failure raises
    SolverError whose ``report`` is the trace so far.
    """
    from .io import rng_for

    X, Y = _check_xy(X, Y)
    windows = windows if windows is not None else resolve_windows(X, Y, config)
    params = initial_params(config, windows.P)
    trace = TrainTrace()
    if config.max_iter == 0:
        return params, trace

    engine = config.engine(KernelSpec(config.family, windows, params), X)
    if probes is None:
        probes = ProbeSet.rademacher(X.shape[0], config.n_probes, rng_for(config.seed, "probes"),
                                     seed=config.seed)
    budget = config.budget()
    adam = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    raw = np.array(params.raw)
    M = None
    for it in range(config.max_iter):
        started = time.perf_counter()
        params = HyperParams(tuple(raw))
        engine.set_params(params)
        try:
            if M is None or it % config.rebuild_every == 0:
                M = precond.build(engine.spec, X, config.landmarks_per_window, config.fill, config.n_jobs)
            step = loss_and_grad(None, Y, engine, M, probes, budget)
        except SolverError as exc:
            exc.report = trace
            raise
        g = step.grad.copy()
        if config.sigma_f_mode == "fixed":
            g[0] = 0.0
        trace.append(params, step.loss, np.linalg.norm(g), time.perf_counter() - started)
        if it % config.log_every == 0 or it == config.max_iter - 1:
            log.info("iter %4d  loss %.6f  |g| %.3e  sigma_f %.4f  ell %.4f  sigma_eps %.4f",
                     it, step.loss, trace.grad_norm[-1], *params.values)
        adam.step(raw, g)
    return HyperParams(tuple(raw)), trace


# ---------------------------------------------------------
# prediction
# ---------------------------------------------------------
@dataclass
class Prediction:
    mean: np.ndarray
    latent_var: np.ndarray
    noisy_var: np.ndarray
    n_clamped: int = 0

    @property
    def lo95(self) -> np.ndarray:
        return self.mean - Z95 * np.sqrt(self.noisy_var)

    @property
    def hi95(self) -> np.ndarray:
        return self.mean + Z95 * np.sqrt(self.noisy_var)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"mean": self.mean, "latent_var": self.latent_var, "noisy_var": self.noisy_var,
                             "lo95": self.lo95, "hi95": self.hi95})


def predict(params: HyperParams, windows: FeatureWindows, X_train, Y, X_test,
            config: TrainConfig = TrainConfig(), return_var: bool = True) -> Prediction:
    """Posterior mean and variance at X_test.

    mean = K_{*X} Khat^-1 Y and var_j = k(x_j, x_j) - k_j^T Khat^-1 k_j, every
    solve by AAFN-preconditioned CG with the prediction budget.
    """
    X_train, Y = _check_xy(X_train, Y)
    X_test = np.asarray(X_test, dtype=float)
    if X_test.ndim != 2 or X_test.shape[1] != X_train.shape[1]:
        raise ShapeError(f"test points must have shape (n_test, {X_train.shape[1]}), got {X_test.shape}")
    spec = KernelSpec(config.family, windows, params)
    scaling = None
    if config.backend == "nfft":
        scaling, _ = scale_windows(np.vstack([X_train, X_test]), windows)
    engine = config.engine(spec, X_train, scaling=scaling)
    M = precond.build(spec, X_train, config.landmarks_per_window, config.fill, config.n_jobs)
    budget = config.budget(prediction=True)
    khat = engine.operator(Operator.KHAT)

    alpha = pcg(khat, M.apply_inverse, Y, budget.cg_tol, budget.cg_iters).x
    mean = engine.cross_matvec(X_test, alpha)
    n_test = X_test.shape[0]
    if not return_var:
        nan = np.full(n_test, np.nan)
        return Prediction(mean, nan, nan)

    cross = engine.cross_block(X_test)
    prior = params.sigma_f ** 2 * windows.P

    def reduction(j):
        k_j = cross[:, j]
        return k_j @ pcg(khat, M.apply_inverse, k_j, budget.cg_tol, budget.cg_iters).x

    if config.n_jobs == 1:
        explained = np.array([reduction(j) for j in range(n_test)])
    else:
        explained = np.array(Parallel(n_jobs=config.n_jobs, prefer="threads")(
            delayed(reduction)(j) for j in range(n_test)))
    var = prior - explained
    negative = var < 0
    n_clamped = int(negative.sum())
    if n_clamped:
        warnings.warn(f"clamped {n_clamped} negative predictive variances to 0", UserWarning)
        var = np.where(negative, 0.0, var)
    return Prediction(mean, var, var + params.sigma_eps ** 2, n_clamped)


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    if pred.size == 0:
        raise ShapeError("rmse of an empty sample")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def grf_sample(points, family, sigma_f: float, ell: float, sigma_eps: float, seed=None,
               windows: FeatureWindows | None = None, cap: int | None = DEFAULT_ORACLE_CAP,
               rng=None) -> np.ndarray:
    """Labels y = L g + sigma_eps g' from a zero-mean field with the (additive) kernel covariance."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if cap is not None and n > cap:
        raise ParameterError(f"GRF sampling limited to {cap} points, got {n}")
    windows = windows if windows is not None else FeatureWindows.single(X.shape[1])
    rng = rng if rng is not None else np.random.default_rng(seed)
    g = rng.standard_normal(n)
    noise = rng.standard_normal(n)
    if sigma_f == 0:
        return sigma_eps * noise
    K = sigma_f ** 2 * summed_subkernels(Family.parse(family), X, X, windows, ell)
    K[np.diag_indices(n)] += GRF_JITTER * max(1.0, np.trace(K) / n)
    try:
        L = sla.cholesky(K, lower=True)
    except sla.LinAlgError as exc:
        raise SolverError("GRF covariance is not positive definite after jitter") from exc
    return L @ g + sigma_eps * noise


class AdditiveGPRegressor(BaseEstimator, RegressorMixin):
    """scikit-learn style wrapper around :func:`adam_fit` and :func:`predict`."""

    def __init__(self, config: TrainConfig | None = None, windows=None):
        self.config = config
        self.windows = windows

    def _config(self) -> TrainConfig:
        return self.config if self.config is not None else TrainConfig()

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        cfg = self._config()
        if self.windows is not None:
            windows = self.windows if isinstance(self.windows, FeatureWindows) else FeatureWindows(self.windows)
        else:
            windows = resolve_windows(X, y, cfg)
        self.windows_ = windows
        self.params_, self.trace_ = adam_fit(X, y, cfg, windows)
        self.X_train_ = X
        self.y_train_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def predict_full(self, X, return_var: bool = True) -> Prediction:
        check_is_fitted(self, "params_")
        X = check_array(X)
        return predict(self.params_, self.windows_, self.X_train_, self.y_train_, X, self._config(),
                       return_var=return_var)

    def predict(self, X, return_std: bool = False):
        pred = self.predict_full(X, return_var=return_std)
        if return_std:
            return pred.mean, np.sqrt(pred.latent_var)
        return pred.mean

    def predict_interval(self, X):
        pred = self.predict_full(X)
        return pred.lo95, pred.hi95

    @property
    def hyperparameters_(self) -> dict:
        check_is_fitted(self, "params_")
        sf, ell, se = self.params_.values
        return {"sigma_f": float(sf), "ell": float(ell), "sigma_eps": float(se)}
