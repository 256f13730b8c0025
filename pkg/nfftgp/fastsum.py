"""Kernel matrix-vector products for additive kernels.

Two backends share one interface: ``exact`` multiplies with dense per-window
kernel matrices, ``nfft`` approximates every window's sum

    h_s(x_i) = sum_j v_j kappa(x_i^{W_s} - x_j^{W_s})

by an adjoint NFFT, a pointwise product with the kernel's Fourier
coefficients and a forward NFFT. Points are scaled per window into
[-1/4, 1/4)^{d_s} and the length scale with them, so kernel values are
unchanged by the scaling.

The coefficient table of a window is the discrete Fourier transform of the
kernel sampled on the m^d grid. With ``table_tol`` set, the engine checks the
resulting trigonometric interpolant against the kernel at the cell centres
that pair differences can reach, and doubles that window's bandwidth until
the relative deviation is below ``table_tol`` or m^d would exceed
``max_grid``.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from . import transform
from .errors import DomainError, ParameterError, ShapeError
from .kernels import (D_MAX, DEFAULT_ORACLE_CAP, HyperParams, KernelSpec, Operator,
                      derivative_from_dist, kernel_from_dist, window_distances)

log = logging.getLogger(__name__)

SCALE_MARGIN = 1.0 / 64.0
BACKENDS = ("exact", "nfft")
DEFAULT_MAX_GRID = 2 ** 16
_TABLE_CACHE_SIZE = 32


@dataclass(frozen=True)
class WindowScaling:
    """Per-window affine map x -> (x - center_s) / c_s."""

    factors: tuple
    centers: tuple

    def __post_init__(self):
        if len(self.factors) != len(self.centers):
            raise ShapeError("one scale factor and one center per window")
        if not all(c > 0 and np.isfinite(c) for c in self.factors):
            raise ParameterError(f"scale factors must be positive and finite, got {self.factors}")

    def effective_ell(self, ell: float) -> np.ndarray:
        return ell / np.asarray(self.factors)

    def apply(self, X, windows) -> list:
        X = np.asarray(X, dtype=float)
        return [(X[:, list(w)] - center) / c
                for w, c, center in zip(windows, self.factors, self.centers)]


def scale_windows(X, windows, margin: float = SCALE_MARGIN):
    """Fit a WindowScaling on X and return it with the scaled per-window point sets.

    The largest coordinate range in window s is mapped onto 1/2 - margin,
    centred at zero, so all pairwise differences stay inside [-1/2, 1/2).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"expected a nonempty 2-d point set, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("point set contains non-finite coordinates")
    factors, centers = [], []
    for w in windows:
        sub = X[:, list(w)]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        spread = float((hi - lo).max())
        factors.append(spread / (0.5 - margin) if spread > 0 else 1.0)
        centers.append(0.5 * (lo + hi))
    scaling = WindowScaling(tuple(factors), tuple(centers))
    return scaling, scaling.apply(X, windows)


def _kernel_samples(family, nodes, ell_s, derivative, factor):
    dist = np.linalg.norm(nodes, axis=1)
    if derivative:
        return derivative_from_dist(family, dist, ell_s) / factor
    return kernel_from_dist(family, dist, ell_s)


def _sampled_table(family, d, m, ell_s, derivative, factor):
    samples = _kernel_samples(family, transform.grid_nodes(m, d), ell_s, derivative, factor)
    return transform.grid_fourier_coeffs(samples.reshape((m,) * d))


def table_deviation(family, table: transform.CoeffTable, ell_s, derivative=False, factor=1.0,
                    reach: float = 0.5 - SCALE_MARGIN) -> float:
    """max |kappa_RF - kappa| / max |kappa| over the cell centres with every |r_i| <= reach."""
    m, d = table.m, table.d
    centres = transform.grid_nodes(m, d) + 0.5 / m
    inside = np.all(np.abs(centres) <= reach + 1e-12, axis=1)
    exact = _kernel_samples(family, centres[inside], ell_s, derivative, factor)
    approx = transform.half_shift_values(table).ravel()[inside]
    scale = np.abs(exact).max()
    diff = np.abs(approx - exact).max()
    return float(diff / scale) if scale > 0 else float(diff)


def _fastsum(plan, table, v):
    coeffs = transform.adjoint(plan, v)
    return transform.forward(plan, coeffs.values * table.values).real


class AdditiveMatvecEngine:
    """Products with Khat and its hyperparameter derivatives for a fixed point set.

    Parameters
    ----------
    spec : KernelSpec
        Family, windows and current hyperparameters.
    X : (n, p) array
        Training inputs; plans are built once for these points.
    backend : {"nfft", "exact"}
    m, sigma_over, s :
        NFFT bandwidth, oversampling and window support. ``m`` is the
        starting bandwidth of every window.
    scaling : WindowScaling, optional
        Precomputed scaling (for instance fitted on train and test points
        together). Fitted on X when omitted.
    n_jobs : int
        Threads used for the per-window sums.
    table_tol : float, optional
        Relative interpolation tolerance for the coefficient tables; None
        keeps every window at ``m``.
    max_grid : int
        Largest m^d a window may grow to under ``table_tol``.
    """

    def __init__(self, spec: KernelSpec, X, backend: str = "nfft", m: int = 32,
                 sigma_over: float = transform.DEFAULT_SIGMA, s: int = transform.DEFAULT_SUPPORT,
                 scaling: WindowScaling | None = None, n_jobs: int = 1,
                 cap: int | None = DEFAULT_ORACLE_CAP, table_tol: float | None = None,
                 max_grid: int = DEFAULT_MAX_GRID):
        if backend not in BACKENDS:
            raise ParameterError(f"backend must be one of {BACKENDS}, got {backend!r}")
        if table_tol is not None and not table_tol > 0:
            raise ParameterError(f"table_tol must be positive or None, got {table_tol}")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ShapeError(f"expected a nonempty 2-d point set, got shape {X.shape}")
        spec.windows.check_dim(X.shape[1])
        self.backend = backend
        self.X = X
        self.m, self.sigma_over, self.s = int(m), float(sigma_over), int(s)
        self.n_jobs = int(n_jobs)
        self.cap = cap
        self.table_tol = table_tol
        self.max_grid = int(max_grid)
        self._spec = spec
        self._cache = OrderedDict()
        self._plan_cache = {}
        self._capped = set()
        self._tables_ell = None
        self._tables = None
        self._derivative_tables = None

        if backend == "nfft":
            big = [list(w) for w in spec.windows if len(w) > D_MAX]
            if big:
                raise ParameterError(f"nfft backend supports windows of at most {D_MAX} features, got {big}")
            if scaling is None:
                scaling, scaled = scale_windows(X, spec.windows)
            else:
                if len(scaling.factors) != spec.windows.P:
                    raise ShapeError("scaling does not match the number of windows")
                scaled = scaling.apply(X, spec.windows)
            self.scaling = scaling
            self._scaled = scaled
            self.window_m = [self.m] * len(scaled)
            try:
                for idx in range(len(scaled)):
                    self._plan(idx, self.m)
            except DomainError as exc:
                raise DomainError(f"training points fall outside the supplied scaling: {exc}") from exc
            log.info("nfft engine: n=%d windows=%d m=%d", self.n, spec.windows.P, self.m)
        else:
            if cap is not None and self.n > cap:
                raise ParameterError(f"exact backend limited to {cap} points, got {self.n}")
            self.scaling = scaling
            self.window_m = None
            self._distances = window_distances(X, X, spec.windows)
        self.refresh()

    # -----------------------------------------------------
    # state
    # -----------------------------------------------------
    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def spec(self) -> KernelSpec:
        return self._spec

    @property
    def params(self) -> HyperParams:
        return self._spec.params

    @property
    def plans(self) -> list | None:
        if self.backend != "nfft":
            return None
        return [self._plan(idx, m) for idx, m in enumerate(self.window_m)]

    def set_params(self, params: HyperParams, refresh: bool = True):
        """Switch hyperparameters; tables follow unless ``refresh`` is False."""
        self._spec = self._spec.with_params(params)
        if refresh:
            self.refresh()

    @property
    def stale(self) -> bool:
        return self._tables_ell != self._spec.params.ell

    def refresh(self):
        ell = self._spec.params.ell
        if not self.stale:
            return
        if self.backend == "nfft":
            fitted = [self._fit_window(idx, ell) for idx in range(len(self._scaled))]
            self.window_m = [f[0] for f in fitted]
            self._tables = [f[1] for f in fitted]
            self._derivative_tables = [f[2] for f in fitted]
        else:
            fam = self._spec.family
            self._tables = sum(kernel_from_dist(fam, dist, ell) for dist in self._distances)
            self._derivative_tables = sum(derivative_from_dist(fam, dist, ell) for dist in self._distances)
        self._tables_ell = ell

    def _plan(self, idx, m):
        key = (idx, m)
        if key not in self._plan_cache:
            pts = self._scaled[idx]
            self._plan_cache[key] = transform.build_plan(pts, pts.shape[1], m, self.sigma_over, self.s)
        return self._plan_cache[key]

    def _fit_window(self, idx, ell):
        d = self._scaled[idx].shape[1]
        m = self.m
        while True:
            table, table_err = self._table(idx, ell, False, m)
            dtable, dtable_err = self._table(idx, ell, True, m)
            if self.table_tol is None or max(table_err, dtable_err) <= self.table_tol:
                break
            if (2 * m) ** d > self.max_grid:
                if idx not in self._capped:
                    self._capped.add(idx)
                    log.warning("window %d: table deviation %.2e above tolerance %.2e at the grid cap m=%d",
                                idx, max(table_err, dtable_err), self.table_tol, m)
                break
            m *= 2
        if m != self.window_m[idx]:
            log.debug("window %d: bandwidth %d for ell=%.4g", idx, m, ell)
        self._plan(idx, m)
        return m, table, dtable

    def _table(self, idx, ell, derivative, m):
        c = self.scaling.factors[idx]
        ell_s = ell / c
        key = (self._spec.family, ell_s, m, idx, derivative)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        d = self._scaled[idx].shape[1]
        table = _sampled_table(self._spec.family, d, m, ell_s, derivative, c)
        err = (table_deviation(self._spec.family, table, ell_s, derivative, c)
               if self.table_tol is not None else np.nan)
        self._cache[key] = (table, err)
        if len(self._cache) > _TABLE_CACHE_SIZE:
            self._cache.popitem(last=False)
        return table, err

    # -----------------------------------------------------
    # products
    # -----------------------------------------------------
    def _window_sums(self, v, derivative):
        tables = self._derivative_tables if derivative else self._tables
        plans = self.plans
        if self.n_jobs == 1 or len(plans) == 1:
            parts = [_fastsum(plan, table, v) for plan, table in zip(plans, tables)]
        else:
            parts = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(_fastsum)(plan, table, v) for plan, table in zip(plans, tables))
        out = np.zeros(self.n)
        for part in parts:
            out += part
        return out

    def _summed(self, v, derivative=False):
        if self.backend == "exact":
            mat = self._derivative_tables if derivative else self._tables
            return mat @ v
        return self._window_sums(v, derivative)

    def matvec(self, v, operator=Operator.KHAT) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ShapeError(f"expected a vector of length {self.n}, got shape {v.shape}")
        if self.stale:
            raise ParameterError("coefficient tables are stale after a length-scale change; call refresh()")
        op = Operator(operator)
        p = self._spec.params
        if op is Operator.DSIGMA_EPS:
            return 2.0 * p.sigma_eps * v
        if op is Operator.DELL:
            return p.sigma_f ** 2 * self._summed(v, derivative=True)
        summed = self._summed(v)
        if op is Operator.DSIGMA_F:
            return 2.0 * p.sigma_f * summed
        out = p.sigma_f ** 2 * summed
        if op is Operator.KHAT:
            out += p.sigma_eps ** 2 * v
        return out

    def operator(self, operator=Operator.KHAT):
        """The product as a callable v -> A v."""
        return lambda v: self.matvec(v, operator)

    def diagonal(self) -> np.ndarray:
        """diag(Khat) = sigma_f^2 P + sigma_eps^2 for every row."""
        p = self._spec.params
        return np.full(self.n, p.sigma_f ** 2 * self._spec.windows.P + p.sigma_eps ** 2)

    def cross_matvec(self, X_test, v) -> np.ndarray:
        """K_{test,train} v, without the noise term."""
        X_test = np.asarray(X_test, dtype=float)
        v = np.asarray(v, dtype=float)
        if X_test.ndim != 2 or X_test.shape[1] != self.X.shape[1]:
            raise ShapeError(f"test points must have shape (n_test, {self.X.shape[1]}), got {X_test.shape}")
        if v.shape != (self.n,):
            raise ShapeError(f"expected a vector of length {self.n}, got shape {v.shape}")
        if self.stale:
            raise ParameterError("coefficient tables are stale after a length-scale change; call refresh()")
        p = self._spec.params
        if self.backend == "exact":
            dists = window_distances(X_test, self.X, self._spec.windows)
            S = sum(kernel_from_dist(self._spec.family, dist, p.ell) for dist in dists)
            return p.sigma_f ** 2 * (S @ v)

        n_test = X_test.shape[0]
        padded = np.concatenate([v, np.zeros(n_test)])
        out = np.zeros(n_test)
        for pts, m, table, test_pts in zip(self._scaled, self.window_m, self._tables,
                                           self.scaling.apply(X_test, self._spec.windows)):
            try:
                union = transform.build_plan(np.vstack([pts, test_pts]), pts.shape[1],
                                             m, self.sigma_over, self.s)
            except DomainError as exc:
                raise DomainError(f"test points fall outside the training scaling: {exc}") from exc
            out += _fastsum(union, table, padded)[self.n:]
        return p.sigma_f ** 2 * out

    def cross_block(self, X_test) -> np.ndarray:
        """Dense K_{train,test} block, evaluated directly from the kernel."""
        X_test = np.asarray(X_test, dtype=float)
        p = self._spec.params
        dists = window_distances(self.X, X_test, self._spec.windows)
        return p.sigma_f ** 2 * sum(kernel_from_dist(self._spec.family, dist, p.ell) for dist in dists)


def backend_deviation(engine_a: AdditiveMatvecEngine, engine_b: AdditiveMatvecEngine, v,
                      operator=Operator.KHAT) -> float:
    """max |A v - B v| / max |B v|, the relative deviation of engine_a from engine_b."""
    ref = engine_b.matvec(v, operator)
    scale = np.abs(ref).max()
    diff = np.abs(engine_a.matvec(v, operator) - ref).max()
    return float(diff / scale) if scale > 0 else float(diff)
