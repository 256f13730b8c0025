"""Additive adaptive factorized Nystrom (AAFN) preconditioner.

Landmarks are picked per feature window by farthest point sampling and
merged. With the landmark block first, Khat is approximated as

    M = [[L11, 0], [W^T, G^-1]] [[L11, 0], [W^T, G^-1]]^T,

L11 = chol(Khat_11), W = L11^-1 Khat_12 and G a sparse lower-triangular
FSAI factor with G^T G ~ S^-1 for the Schur complement
S = Khat_22 - Khat_21 Khat_11^-1 Khat_12.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist

from .errors import ParameterError, ShapeError, SolverError
from .kernels import KernelSpec, summed_subkernels

log = logging.getLogger(__name__)

JITTER = 1e-10
_PATTERN_CHUNK = 256


def fps(points, k: int) -> list:
    """Greedy maximin selection of k rows; seeded at the row farthest from the centroid."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"fps needs 1 <= k <= n, got k={k}, n={n}")
    centroid = pts.mean(axis=0)
    first = int(np.argmax(np.linalg.norm(pts - centroid, axis=1)))
    picked = [first]
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    min_dist[first] = -np.inf
    for _ in range(k - 1):
        nxt = int(np.argmax(min_dist))
        picked.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
        min_dist[picked] = -np.inf
    return picked


def select_landmarks(X, windows, k_per_window: int) -> np.ndarray:
    """Union of the per-window FPS picks, deduplicated in first-appearance order."""
    seen, merged = set(), []
    k = min(int(k_per_window), X.shape[0])
    for w in windows:
        for idx in fps(X[:, list(w)], k):
            if idx not in seen:
                seen.add(idx)
                merged.append(idx)
    return np.array(merged, dtype=int)


def _kernel_block(spec: KernelSpec, X, rows, cols) -> np.ndarray:
    p = spec.params
    block = p.sigma_f ** 2 * summed_subkernels(spec.family, X[rows], X[cols], spec.windows, p.ell)
    block[np.asarray(rows)[:, None] == np.asarray(cols)[None, :]] += p.sigma_eps ** 2
    return block


def _cholesky(A) -> np.ndarray:
    try:
        return sla.cholesky(A, lower=True)
    except sla.LinAlgError:
        shift = JITTER * np.trace(A) / A.shape[0]
        log.warning("landmark block not positive definite; retrying with jitter %.3g", shift)
        try:
            return sla.cholesky(A + shift * np.eye(A.shape[0]), lower=True)
        except sla.LinAlgError as exc:
            raise SolverError("Cholesky of the landmark block failed after jitter; "
                              "consider a larger noise level") from exc


def fsai_patterns(X, windows, fill: int) -> list:
    """Row i: the fill-1 nearest earlier rows under the summed windowed distance, then i."""
    n = X.shape[0]
    patterns = []
    for start in range(0, n, _PATTERN_CHUNK):
        stop = min(start + _PATTERN_CHUNK, n)
        D = sum(cdist(X[start:stop, list(w)], X[:, list(w)]) for w in windows)
        for i in range(start, stop):
            if fill <= 1 or i == 0:
                patterns.append(np.array([i]))
                continue
            order = np.argsort(D[i - start, :i], kind="stable")[:fill - 1]
            patterns.append(np.append(np.sort(order), i))
    return patterns


def _fsai_row(J, K22_JJ, W_J):
    S = K22_JJ - W_J.T @ W_J
    e = np.zeros(len(J))
    e[-1] = 1.0
    try:
        y = sla.solve(S, e, assume_a="pos")
    except sla.LinAlgError:
        try:
            y = sla.solve(S, e)
        except sla.LinAlgError as exc:
            raise SolverError(f"local Schur system for row {J[-1]} is singular") from exc
    if not y[-1] > 0 or not np.all(np.isfinite(y)):
        raise SolverError(f"local Schur system for row {J[-1]} is not positive definite")
    return y / np.sqrt(y[-1])


class AafnPrecond:
    """Block factorization preconditioner; see the module docstring for the layout."""

    def __init__(self, landmarks, rest, L11, W, G):
        self.landmarks = np.asarray(landmarks, dtype=int)
        self.rest = np.asarray(rest, dtype=int)
        self.L11 = L11
        self.W = W
        self.G = G
        self.n = len(self.landmarks) + len(self.rest)
        diag_g = G.diagonal() if G.shape[0] else np.ones(0)
        if np.any(np.diag(L11) <= 0) or np.any(diag_g <= 0):
            raise SolverError("preconditioner factors must have a positive diagonal")
        self._logdet = float(2.0 * np.log(np.diag(L11)).sum() - 2.0 * np.log(diag_g).sum())

    @property
    def k(self) -> int:
        return len(self.landmarks)

    def _split(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ShapeError(f"expected a vector of length {self.n}, got shape {v.shape}")
        return v[self.landmarks], v[self.rest]

    def _join(self, a, b):
        out = np.empty(self.n)
        out[self.landmarks] = a
        out[self.rest] = b
        return out

    def apply_inverse(self, v) -> np.ndarray:
        """M^-1 v."""
        v1, v2 = self._split(v)
        y1 = sla.solve_triangular(self.L11, v1, lower=True)
        y2 = v2 - self.W.T @ y1
        z2 = self.G.T @ (self.G @ y2)
        u1 = sla.solve_triangular(self.L11, y1 - self.W @ z2, lower=True, trans="T")
        return self._join(u1, z2)

    def apply_factor_inverse(self, v) -> np.ndarray:
        """C^-1 v for M = C C^T."""
        v1, v2 = self._split(v)
        y1 = sla.solve_triangular(self.L11, v1, lower=True)
        return self._join(y1, self.G @ (v2 - self.W.T @ y1))

    def apply_factor_inverse_t(self, v) -> np.ndarray:
        """C^-T v."""
        v1, v2 = self._split(v)
        u2 = self.G.T @ v2
        u1 = sla.solve_triangular(self.L11, v1 - self.W @ u2, lower=True, trans="T")
        return self._join(u1, u2)

    def logdet(self) -> float:
        return self._logdet

    def __repr__(self):
        return f"AafnPrecond(n={self.n}, k={self.k}, nnz(G)={self.G.nnz})"


class IdentityPrecond:
    """M = I, which turns PCG into plain CG."""

    def __init__(self, n: int):
        self.n = int(n)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ShapeError(f"expected a vector of length {self.n}, got shape {v.shape}")
        return v.copy()

    apply_inverse = _check
    apply_factor_inverse = _check
    apply_factor_inverse_t = _check

    def logdet(self) -> float:
        return 0.0


def build(spec: KernelSpec, X, k_per_window: int = 10, fill: int = 100, n_jobs: int = 1) -> AafnPrecond:
    """Assemble the AAFN preconditioner of Khat(spec) on the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"expected a nonempty 2-d point set, got shape {X.shape}")
    if k_per_window < 1:
        raise ParameterError(f"k_per_window must be >= 1, got {k_per_window}")
    if fill < 1:
        raise ParameterError(f"fill must be >= 1, got {fill}")
    spec.windows.check_dim(X.shape[1])
    n = X.shape[0]

    landmarks = select_landmarks(X, spec.windows, k_per_window)
    mask = np.ones(n, dtype=bool)
    mask[landmarks] = False
    rest = np.flatnonzero(mask)

    L11 = _cholesky(_kernel_block(spec, X, landmarks, landmarks))
    K21 = _kernel_block(spec, X, rest, landmarks)
    W = sla.solve_triangular(L11, K21.T, lower=True) if len(rest) else np.zeros((len(landmarks), 0))

    m = len(rest)
    if m:
        Xr = X[rest]
        patterns = fsai_patterns(Xr, spec.windows, fill)
        if n_jobs == 1:
            rows = [_fsai_row(J, _kernel_block(spec, Xr, J, J), W[:, J]) for J in patterns]
        else:
            rows = Parallel(n_jobs=n_jobs, prefer="threads")(
                delayed(_fsai_row)(J, _kernel_block(spec, Xr, J, J), W[:, J]) for J in patterns)
        indptr = np.cumsum([0] + [len(J) for J in patterns])
        G = sps.csr_matrix((np.concatenate(rows), np.concatenate(patterns), indptr), shape=(m, m))
    else:
        G = sps.csr_matrix((0, 0))
    precond = AafnPrecond(landmarks, rest, L11, W, G)
    log.info("AAFN built: n=%d landmarks=%d fill=%d logdet=%.6g", n, precond.k, fill, precond.logdet())
    return precond
