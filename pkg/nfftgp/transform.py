"""Nonequispaced FFT on the torus with a Kaiser-Bessel window.

A plan evaluates trigonometric polynomials

    f(x) = sum_{k in I_m} b_k exp(2 pi i k.x),   I_m = {-m/2, ..., m/2 - 1}^d

at arbitrary points x in [-1/4, 1/4)^d (forward) and accumulates the adjoint
sums sum_j v_j exp(-2 pi i k.x_j). Both go through an oversampled grid of
size N = sigma*m per axis: deconvolve by the window's Fourier coefficients,
FFT, then spread/gather with the compactly supported window. Spreading is a
precomputed sparse matrix, so a plan costs O(n (2s+1)^d) memory and every
transform is one sparse product plus one FFT.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sps
from scipy.special import i0

from .errors import DomainError, ParameterError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 2.0
DEFAULT_SUPPORT = 8
POINT_LO, POINT_HI = -0.25, 0.25


# ---------------------------------------------------------
# Kaiser-Bessel window
# ---------------------------------------------------------
def _kb_shape(sigma: float) -> float:
    return np.pi * (2.0 - 1.0 / sigma)


def kaiser_bessel_window(x, n_os: int, s: int, sigma: float) -> np.ndarray:
    """Truncated Kaiser-Bessel window phi(x), zero outside |x| <= s/n_os."""
    x = np.asarray(x, dtype=float)
    b = _kb_shape(sigma)
    arg = s * s - (n_os * x) ** 2
    out = np.zeros_like(x)
    inside = arg > 0
    root = np.sqrt(arg[inside])
    out[inside] = np.sinh(b * root) / (np.pi * root)
    # limit of sinh(b r)/(pi r) at r -> 0
    out[arg == 0] = b / np.pi
    return out


def kaiser_bessel_coeffs(k, n_os: int, s: int, sigma: float) -> np.ndarray:
    """Fourier coefficients c_k(phi) of the window, via the zero-order Bessel closed form."""
    k = np.asarray(k, dtype=float)
    b = _kb_shape(sigma)
    return i0(s * np.sqrt(b * b - (2.0 * np.pi * k / n_os) ** 2)) / n_os


# ---------------------------------------------------------
# Plan and coefficient table
# ---------------------------------------------------------
@dataclass(frozen=True)
class CoeffTable:
    """Complex coefficients b_k on I_m, stored centred: index k + m/2 on every axis."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim < 1 or len(set(vals.shape)) != 1:
            raise ShapeError(f"coefficient table must be an m^d cube, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("coefficient table has non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.ndim

    def __len__(self) -> int:
        return self.values.size

    def norm1(self) -> float:
        return float(np.abs(self.values).sum())

    def scaled(self, factor) -> "CoeffTable":
        return CoeffTable(self.values * factor)


@dataclass(frozen=True, eq=False)
class FourierPlan:
    d: int
    m: int
    sigma_over: float
    s: int
    points: np.ndarray
    n_os: int
    spread: sps.csr_matrix
    deconv: np.ndarray
    freq_index: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_freqs(self) -> int:
        return self.m ** self.d

    @property
    def sigma_eff(self) -> float:
        return self.n_os / self.m


def oversampled_size(m: int, sigma_over: float) -> int:
    """sigma*m rounded up to the next even integer."""
    n = int(np.ceil(sigma_over * m - 1e-12))
    return n + (n % 2)


def frequencies(m: int) -> np.ndarray:
    return np.arange(-m // 2, m // 2)


def grid_nodes(m: int, d: int) -> np.ndarray:
    """Nodes l/m, l in I_m^d, as an (m^d, d) array in centred C order."""
    axis = frequencies(m) / m
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _check_params(d, m, sigma_over, s):
    if d not in (1, 2, 3):
        raise ParameterError(f"dimension d must be 1, 2 or 3, got {d}")
    if int(m) != m or m < 4 or m % 2:
        raise ParameterError(f"bandwidth m must be an even integer >= 4, got {m}")
    if not sigma_over > 1:
        raise ParameterError(f"oversampling factor must exceed 1, got {sigma_over}")
    if int(s) != s or s < 1 or not s < sigma_over * m / 2:
        raise ParameterError(f"support s must be an integer in [1, sigma*m/2), got {s}")


def check_points(points, d: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and d == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[1] != d:
        raise ShapeError(f"expected points of shape (n, {d}), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DomainError("points contain non-finite coordinates")
    bad = (pts < POINT_LO) | (pts >= POINT_HI)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise DomainError(f"point {row} = {pts[row].tolist()} lies outside [-1/4, 1/4)^{d}")
    return pts


def _spread_matrix(pts, n_os, s, sigma):
    n, d = pts.shape
    offsets = np.arange(-s, s + 1)
    cols, vals = None, None
    for j in range(d):
        u = n_os * pts[:, j]
        near = np.floor(u).astype(np.int64)[:, None] + offsets[None, :]
        w = kaiser_bessel_window(pts[:, j, None] - near / n_os, n_os, s, sigma)
        idx = np.mod(near, n_os)
        if cols is None:
            cols, vals = idx, w
        else:
            cols = (cols[:, :, None] * n_os + idx[:, None, :]).reshape(n, -1)
            vals = (vals[:, :, None] * w[:, None, :]).reshape(n, -1)
    rows = np.repeat(np.arange(n), cols.shape[1])
    return sps.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n, n_os ** d))


def build_plan(points, d: int, m: int, sigma_over: float = DEFAULT_SIGMA,
               s: int = DEFAULT_SUPPORT) -> FourierPlan:
    """Precompute the window spreading matrix and the deconvolution table.

    Parameters
    ----------
    points : (n, d) array
        Nodes in [-1/4, 1/4)^d.
    d : int
        Dimension, 1 to 3.
    m : int
        Even bandwidth per axis; the plan covers m^d frequencies.
    sigma_over : float
        Oversampling factor > 1. The grid is sigma*m rounded up to even.
    s : int
        Window support parameter, 1 <= s < sigma*m/2.
    """
    _check_params(d, m, sigma_over, s)
    pts = check_points(points, d).copy()
    pts.setflags(write=False)
    n_os = oversampled_size(m, sigma_over)
    sigma_eff = n_os / m

    c1 = kaiser_bessel_coeffs(frequencies(m), n_os, s, sigma_eff)
    if not np.all(c1 > 0) or not np.all(np.isfinite(1.0 / c1)):
        raise ParameterError("window Fourier coefficients underflow; lower s or raise sigma")
    deconv = 1.0 / c1
    for _ in range(d - 1):
        deconv = np.multiply.outer(deconv, 1.0 / c1)
    deconv.setflags(write=False)

    freq_index = np.mod(frequencies(m), n_os)
    freq_index.setflags(write=False)
    spread = _spread_matrix(pts, n_os, s, sigma_eff)
    log.debug("plan d=%d m=%d n_os=%d s=%d n=%d nnz=%d", d, m, n_os, s, len(pts), spread.nnz)
    return FourierPlan(d=d, m=m, sigma_over=float(sigma_over), s=int(s), points=pts,
                       n_os=n_os, spread=spread, deconv=deconv, freq_index=freq_index)


# ---------------------------------------------------------
# Transforms
# ---------------------------------------------------------
def _coeff_values(plan: FourierPlan, b) -> np.ndarray:
    vals = b.values if isinstance(b, CoeffTable) else np.asarray(b, dtype=complex)
    if vals.size != plan.n_freqs:
        raise ShapeError(f"coefficient table has {vals.size} entries, plan needs {plan.n_freqs}")
    return vals.reshape((plan.m,) * plan.d)


def forward(plan: FourierPlan, b) -> np.ndarray:
    """f(x_j) ~ sum_k b_k exp(2 pi i k.x_j) for every plan point."""
    vals = _coeff_values(plan, b)
    g_hat = np.zeros((plan.n_os,) * plan.d, dtype=complex)
    g_hat[np.ix_(*([plan.freq_index] * plan.d))] = vals * plan.deconv
    g = scipy.fft.ifftn(g_hat)
    return plan.spread @ g.ravel()


def adjoint(plan: FourierPlan, v) -> CoeffTable:
    """Approximations of sum_j v_j exp(-2 pi i k.x_j), k in I_m."""
    v = np.asarray(v)
    if v.shape != (plan.n_points,):
        raise ShapeError(f"expected a vector of length {plan.n_points}, got shape {v.shape}")
    grid = (plan.spread.T @ v).reshape((plan.n_os,) * plan.d)
    g_hat = scipy.fft.fftn(grid) / plan.n_os ** plan.d
    return CoeffTable(g_hat[np.ix_(*([plan.freq_index] * plan.d))] * plan.deconv)


def grid_fourier_coeffs(kernel_samples) -> CoeffTable:
    """Discrete Fourier coefficients b_k = m^-d sum_l kappa(l/m) exp(-2 pi i l.k/m).

    ``kernel_samples`` is the m^d cube of samples at the nodes l/m in centred
    order (as laid out by :func:`grid_nodes`).
    """
    samples = np.asarray(kernel_samples, dtype=float)
    if samples.ndim < 1 or len(set(samples.shape)) != 1:
        raise ShapeError(f"kernel samples must be an m^d cube, got shape {samples.shape}")
    m = samples.shape[0]
    spectrum = scipy.fft.fftn(scipy.fft.ifftshift(samples)) / m ** samples.ndim
    return CoeffTable(scipy.fft.fftshift(spectrum))


def direct_sum(points, b) -> np.ndarray:
    """O(n m^d) evaluation of the trigonometric polynomial, the oracle for forward()."""
    vals = b.values if isinstance(b, CoeffTable) else np.asarray(b, dtype=complex)
    m, d = vals.shape[0], vals.ndim
    pts = np.asarray(points, dtype=float).reshape(-1, d)
    k = grid_nodes(m, d) * m
    return np.exp(2j * np.pi * pts @ k.T) @ vals.ravel()


def half_shift_values(b) -> np.ndarray:
    """The trigonometric polynomial at the cell centres (l + 1/2)/m, as a real m^d cube in centred order."""
    vals = b.values if isinstance(b, CoeffTable) else np.asarray(b, dtype=complex)
    m, d = vals.shape[0], vals.ndim
    phase = np.exp(1j * np.pi * frequencies(m) / m)
    shifted = vals
    for axis in range(d):
        shape = [1] * d
        shape[axis] = m
        shifted = shifted * phase.reshape(shape)
    grid = scipy.fft.ifftn(scipy.fft.ifftshift(shifted)) * m ** d
    return scipy.fft.fftshift(grid).real
