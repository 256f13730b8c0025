"""Fourier approximation error bounds for the trivariate Matern(1/2) kernel and its derivative.

Closed forms for the periodization gaps, the Fourier error bounds of the
periodized kernels and the NFFT window error, plus a harness measuring
sup |kappa(r) - kappa_RF(r)| over pair differences of random points in
[-1/4, 1/4)^3, where kappa_RF is the trigonometric interpolant built from
the m^3 grid samples.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import transform
from .errors import DomainError, ParameterError
from .kernels import Family, derivative_from_dist, kernel_from_dist

log = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)
BOUND_FAMILIES = ("matern", "dermatern")
LATTICE_RADIUS = 6
MEASURE_SUPPORT = 6


def _check_ell(ell):
    if not ell > 0:
        raise ParameterError(f"length scale must be positive, got {ell}")


def _check_m(m):
    if not m > 2 * SQRT3:
        raise DomainError(f"bandwidth must exceed 2*sqrt(3), got {m}")


# ---------------------------------------------------------
# closed forms
# ---------------------------------------------------------
def periodization_gap_matern(ell: float) -> float:
    _check_ell(ell)
    a = 1.0 + 2.0 * SQRT3 * ell
    e = np.exp(-1.0 / (2.0 * SQRT3 * ell))
    return float(3.0 * e * a + 3.0 * e ** 2 * a ** 2 + e ** 3 * a ** 3)


def periodization_gap_matern_1d(ell: float) -> float:
    _check_ell(ell)
    return float(np.exp(-1.0 / (2.0 * ell)) * (1.0 + 2.0 * ell))


def periodization_gap_dermatern(ell: float) -> float:
    _check_ell(ell)
    if ell >= 0.5:
        raise DomainError(f"derivative periodization gap needs ell < 1/2, got {ell}")
    e = np.exp(-1.0 / (2.0 * SQRT3 * ell))
    base = 3.0 / ell ** 2
    first = (1.0 + e * (1.0 + 2.0 * SQRT3 * ell)) ** 2
    second = 1.0 + e * (1.0 + 2.0 * SQRT3 * ell + 12.0 * ell ** 2)
    return float(base * first * second - base)


def fourier_bound_matern(m: float, ell: float) -> float:
    _check_m(m)
    _check_ell(ell)
    return float(8.0 / (np.pi ** 2 * ell * (m - 2.0 * SQRT3)))


def fourier_bound_dermatern(m: float, ell: float) -> float:
    _check_m(m)
    _check_ell(ell)
    gap = m - 2.0 * SQRT3
    return float(32.0 / (ell ** 4 * np.pi ** 4 * 3.0 * gap ** 3) + 8.0 / (ell ** 2 * np.pi ** 2 * gap))


def fourier_bound(family: str, m: float, ell: float) -> float:
    if family == "matern":
        return fourier_bound_matern(m, ell)
    if family == "dermatern":
        return fourier_bound_dermatern(m, ell)
    raise ParameterError(f"bound family must be one of {BOUND_FAMILIES}, got {family!r}")


def nfft_window_bound(s: int, sigma_over: float, b_norm1: float = 1.0) -> float:
    """||b||_1 * 4 pi (s + sqrt(s)) (1 - 1/sigma)^(1/4) exp(-2 pi s sqrt(1 - 1/sigma))."""
    if not sigma_over > 1:
        raise DomainError(f"oversampling factor must exceed 1, got {sigma_over}")
    if s < 1:
        raise ParameterError(f"support must be >= 1, got {s}")
    root = np.sqrt(1.0 - 1.0 / sigma_over)
    return float(b_norm1 * 4.0 * np.pi * (s + np.sqrt(s)) * np.sqrt(root)
                 * np.exp(-2.0 * np.pi * s * root))


# ---------------------------------------------------------
# kernels and periodizations
# ---------------------------------------------------------
def bound_kernel(family: str, r, ell: float) -> np.ndarray:
    """Matern(1/2) (``matern``) or its ell-derivative (``dermatern``) at difference vectors r."""
    dist = np.linalg.norm(np.atleast_2d(r), axis=1)
    if family == "matern":
        return kernel_from_dist(Family.MATERN12, dist, ell)
    if family == "dermatern":
        return derivative_from_dist(Family.MATERN12, dist, ell)
    raise ParameterError(f"bound family must be one of {BOUND_FAMILIES}, got {family!r}")


def periodized(family: str, ell: float, points, radius: int = LATTICE_RADIUS) -> np.ndarray:
    """sum_n kappa(r + n) over integer shifts with |n_j| <= radius."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(pts.shape[0])
    for shift in itertools.product(range(-radius, radius + 1), repeat=pts.shape[1]):
        out += bound_kernel(family, pts + np.array(shift), ell)
    return out


def periodization_tail(family: str, ell: float, points, radius: int = LATTICE_RADIUS) -> float:
    """max |kappa~(r) - kappa(r)| over the given points, by truncated lattice sums."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return float(np.abs(periodized(family, ell, pts, radius) - bound_kernel(family, pts, ell)).max())


def grid_table(family: str, m: int, ell: float, d: int = 3, periodize: bool = False) -> transform.CoeffTable:
    """Discrete Fourier coefficients of the kernel (or its periodization) sampled on the m^d grid."""
    nodes = transform.grid_nodes(m, d)
    samples = periodized(family, ell, nodes) if periodize else bound_kernel(family, nodes, ell)
    return transform.grid_fourier_coeffs(samples.reshape((m,) * d))


# ---------------------------------------------------------
# measurement harness
# ---------------------------------------------------------
def _column_evaluator(points, m, s):
    """Returns f(table, j) = [sum_k b_k exp(2 pi i k.(x_i - x_j))]_i evaluated by one forward NFFT."""
    d = points.shape[1]
    plan = transform.build_plan(points, d, m, transform.DEFAULT_SIGMA, s)
    freqs = transform.grid_nodes(m, d) * m

    def column(values, j):
        phase = np.exp(-2j * np.pi * freqs @ points[j]).reshape((m,) * d)
        return transform.forward(plan, values * phase).real

    return column


def _sample_columns(rng, n_samples, columns, d=3):
    points = rng.uniform(transform.POINT_LO, transform.POINT_HI, size=(n_samples, d))
    cols = rng.choice(n_samples, size=min(columns, n_samples), replace=False)
    return points, cols


def measure_max_error(family: str, m: int, ell: float, n_samples: int = 4000, columns: int = 250,
                      seed: int | None = 0, rng=None, s: int = MEASURE_SUPPORT) -> float:
    """sup over sampled pairs of |kappa(x_i - x_j) - kappa_RF(x_i - x_j)|.

    Every sampled column j is evaluated against all n_samples points, so
    n_samples * columns pairs enter the maximum.
    """
    _check_ell(ell)
    rng = rng if rng is not None else np.random.default_rng(seed)
    points, cols = _sample_columns(rng, n_samples, columns)
    table = grid_table(family, m, ell).values
    column = _column_evaluator(points, m, s)
    worst = 0.0
    for j in cols:
        exact = bound_kernel(family, points - points[j], ell)
        worst = max(worst, float(np.abs(exact - column(table, j)).max()))
    log.debug("measured %s m=%d ell=%.4g: %.3e over %d pairs", family, m, ell, worst, len(cols) * n_samples)
    return worst


def total_error_components(family: str, m: int, ell: float, n_samples: int = 1000, columns: int = 50,
                           seed: int | None = 0, rng=None, s: int = MEASURE_SUPPORT) -> dict:
    """Measured terms of |k - k_RF| <= |k - k~| + |k~ - k~_RF| + |k_RF - k~_RF|.

    Keys: ``total``, ``periodization``, ``fourier_periodized``, ``aliasing``.
    """
    _check_ell(ell)
    rng = rng if rng is not None else np.random.default_rng(seed)
    points, cols = _sample_columns(rng, n_samples, columns)
    b_plain = grid_table(family, m, ell).values
    b_per = grid_table(family, m, ell, periodize=True).values
    column = _column_evaluator(points, m, s)
    out = dict(total=0.0, periodization=0.0, fourier_periodized=0.0, aliasing=0.0)
    for j in cols:
        r = points - points[j]
        exact = bound_kernel(family, r, ell)
        per = periodized(family, ell, r)
        rf_plain = column(b_plain, j)
        rf_per = column(b_per, j)
        out["total"] = max(out["total"], float(np.abs(exact - rf_plain).max()))
        out["periodization"] = max(out["periodization"], float(np.abs(exact - per).max()))
        out["fourier_periodized"] = max(out["fourier_periodized"], float(np.abs(per - rf_per).max()))
        out["aliasing"] = max(out["aliasing"], float(np.abs(rf_plain - rf_per).max()))
    return out


@dataclass
class BoundReport:
    family: str
    m: np.ndarray
    ell: np.ndarray
    bound: np.ndarray
    measured: np.ndarray
    n_pairs: int
    components: pd.DataFrame | None = None

    @property
    def ratio(self) -> np.ndarray:
        return self.bound / np.maximum(self.measured, np.finfo(float).tiny)

    @property
    def valid(self) -> bool:
        return bool(np.all(self.measured <= self.bound))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"ell": self.ell, "m": self.m, "bound": self.bound,
                              "measured": self.measured, "ratio": self.ratio,
                              "derivative": int(self.family == "dermatern")})
        if self.components is not None:
            frame = pd.concat([frame, self.components.reset_index(drop=True)], axis=1)
        return frame


def verify_bounds(family: str, m_values, ell_grid, n_samples: int = 4000, columns: int = 250,
                  seed: int | None = 0, components: bool = False) -> BoundReport:
    """Bound vs measurement on every (m, ell) pair; one random point set per pair, same seed."""
    if family not in BOUND_FAMILIES:
        raise ParameterError(f"bound family must be one of {BOUND_FAMILIES}, got {family!r}")
    rows, comps = [], []
    for m in m_values:
        for ell in ell_grid:
            measured = measure_max_error(family, int(m), float(ell), n_samples, columns, seed=seed)
            rows.append((int(m), float(ell), fourier_bound(family, m, ell), measured))
            if components:
                comps.append(total_error_components(family, int(m), float(ell), seed=seed))
            log.info("%s m=%d ell=%.4g bound=%.3e measured=%.3e", family, m, ell, rows[-1][2], measured)
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return BoundReport(family, arr[:, 0].astype(int), arr[:, 1], arr[:, 2], arr[:, 3],
                       n_pairs=n_samples * columns,
                       components=pd.DataFrame(comps) if components else None)
