"""Preconditioned CG, stochastic Lanczos quadrature and the loss/gradient estimators.

The objective is the negative log marginal likelihood

    Z(theta) = 1/2 (Y^T Khat^-1 Y + log det Khat + n log 2 pi),

with log det Khat = log det M + tr logm(M^-1 Khat). The first part comes
exactly from the preconditioner, the trace is estimated by SLQ on the
symmetric operator C^-1 Khat C^-T (M = C C^T).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import eigh_tridiagonal

from .errors import ParameterError, ShapeError, SolverError
from .kernels import HyperParams, Operator

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
GRAD_OPERATORS = (Operator.DSIGMA_F, Operator.DELL, Operator.DSIGMA_EPS)


@dataclass(frozen=True)
class ProbeSet:
    vectors: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        z = np.asarray(self.vectors, dtype=float)
        if z.ndim != 2:
            raise ShapeError(f"probes must be an (n_z, n) array, got shape {z.shape}")
        if not np.all(np.abs(z) == 1.0):
            raise ParameterError("Rademacher probes must have entries +-1")
        z.setflags(write=False)
        object.__setattr__(self, "vectors", z)

    @classmethod
    def rademacher(cls, n: int, n_z: int, rng=None, seed: int | None = None) -> "ProbeSet":
        if n_z < 1:
            raise ParameterError(f"need at least one probe, got {n_z}")
        rng = rng if rng is not None else np.random.default_rng(seed)
        return cls(rng.choice(np.array([-1.0, 1.0]), size=(n_z, n)), seed)

    @property
    def n_z(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def __iter__(self):
        return iter(self.vectors)


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def relative_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")


@dataclass(frozen=True)
class EstimatorReport:
    """Mean of per-probe samples and their sample variance."""

    samples: np.ndarray

    @property
    def estimate(self) -> float:
        return float(np.mean(self.samples))

    @property
    def variance(self) -> float:
        return float(np.var(self.samples, ddof=1)) if len(self.samples) > 1 else 0.0


@dataclass(frozen=True)
class SolverBudget:
    cg_iters: int = 10
    cg_tol: float = 1e-10
    lanczos_steps: int = 10
    n_jobs: int = 1


# ---------------------------------------------------------
# PCG
# ---------------------------------------------------------
def pcg(apply_A, apply_Minv, b, tol: float = 1e-10, maxit: int = 100, x0=None) -> SolveReport:
    """Preconditioned conjugate gradients for SPD A and M.

    Stops at ||b - A x|| / ||b|| <= tol or after maxit iterations. The
    relative residual history starts with the initial guess.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if x.shape != b.shape:
        raise ShapeError(f"x0 shape {x.shape} does not match b shape {b.shape}")
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return SolveReport(np.zeros_like(b), 0, [0.0], True)

    r = b - apply_A(x) if x0 is not None else b.copy()
    report = SolveReport(x, 0, [np.linalg.norm(r) / b_norm])
    if report.residuals[-1] <= tol:
        report.converged = True
        return report
    z = apply_Minv(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = apply_A(p)
        pAp = p @ Ap
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rel = np.linalg.norm(r) / b_norm
        report.x, report.iterations = x, it
        report.residuals.append(rel)
        if not (np.isfinite(rel) and np.isfinite(alpha)):
            raise SolverError(f"CG produced non-finite iterates at iteration {it}", report)
        if rel <= tol:
            report.converged = True
            break
        z = apply_Minv(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    log.debug("pcg: %d iterations, relative residual %.3e", report.iterations, report.relative_residual)
    return report


# ---------------------------------------------------------
# Lanczos / SLQ
# ---------------------------------------------------------
def lanczos(apply_op, q0, steps: int, breakdown_tol: float = 1e-12):
    """Lanczos tridiagonalisation with full reorthogonalisation.

    Returns the diagonal ``alpha`` and off-diagonal ``beta`` of T; both are
    truncated at a breakdown (beta below breakdown_tol relative to ||T||).
    """
    if steps < 1:
        raise ParameterError(f"lanczos_steps must be >= 1, got {steps}")
    q = np.asarray(q0, dtype=float)
    q = q / np.linalg.norm(q)
    n = q.size
    steps = min(steps, n)
    Q = np.zeros((steps, n))
    alpha, beta = [], []
    Q[0] = q
    for j in range(steps):
        w = apply_op(Q[j])
        a = Q[j] @ w
        alpha.append(a)
        w = w - Q[:j + 1].T @ (Q[:j + 1] @ w)
        w = w - Q[:j + 1].T @ (Q[:j + 1] @ w)
        if j == steps - 1:
            break
        b = np.linalg.norm(w)
        scale = max(abs(a), max(beta, default=0.0), 1.0)
        if b <= breakdown_tol * scale:
            log.debug("lanczos breakdown at step %d", j + 1)
            break
        beta.append(b)
        Q[j + 1] = w / b
    return np.array(alpha), np.array(beta)


def quadrature_logdet(alpha, beta, norm_sq: float) -> float:
    """||z||^2 sum_j tau_j^2 log theta_j for the Ritz pairs of T."""
    if len(alpha) == 1:
        theta, tau = np.asarray(alpha), np.ones(1)
    else:
        theta, vecs = eigh_tridiagonal(alpha, beta)
        tau = vecs[0]
    if np.any(theta <= 0):
        log.warning("nonpositive Ritz values in SLQ; clipping %d of them", int(np.sum(theta <= 0)))
        theta = np.maximum(theta, np.finfo(float).tiny)
    return float(norm_sq * np.sum(tau ** 2 * np.log(theta)))


def slq_logdet_correction(apply_Khat, M, probes: ProbeSet, lanczos_steps: int = 10,
                          n_jobs: int = 1) -> EstimatorReport:
    """SLQ estimate of tr logm(M^-1 Khat) from the split form C^-1 Khat C^-T."""
    def op(v):
        return M.apply_factor_inverse(apply_Khat(M.apply_factor_inverse_t(v)))

    def one(z):
        a, b = lanczos(op, z, lanczos_steps)
        return quadrature_logdet(a, b, z @ z)

    if n_jobs == 1:
        samples = [one(z) for z in probes]
    else:
        samples = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(z) for z in probes)
    return EstimatorReport(np.array(samples))


# ---------------------------------------------------------
# loss and gradient
# ---------------------------------------------------------
@dataclass
class LossGrad:
    """Loss and gradient estimates at one theta, with the per-probe samples behind them."""

    loss: float
    grad: np.ndarray
    grad_values: np.ndarray
    loss_samples: np.ndarray
    grad_samples: np.ndarray
    alpha: SolveReport
    slq: EstimatorReport

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def _sync(engine, params):
    if params is not None and engine.params != params:
        engine.set_params(params)


def _alpha(engine, M, Y, budget):
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (engine.n,):
        raise ShapeError(f"labels must have length {engine.n}, got shape {Y.shape}")
    return pcg(engine.operator(Operator.KHAT), M.apply_inverse, Y, budget.cg_tol, budget.cg_iters)


def _loss_samples(engine, M, Y, probes, budget, solve):
    slq = slq_logdet_correction(engine.operator(Operator.KHAT), M, probes, budget.lanczos_steps,
                                budget.n_jobs)
    data_fit = float(np.asarray(Y) @ solve.x)
    samples = 0.5 * (data_fit + M.logdet() + slq.samples + engine.n * LOG_2PI)
    return samples, slq


def loss(params: HyperParams | None, Y, engine, M, probes: ProbeSet,
         budget: SolverBudget = SolverBudget()) -> float:
    """Z~(theta) = 1/2 (Y^T alpha + log det M + slq + n log 2 pi)."""
    _sync(engine, params)
    solve = _alpha(engine, M, Y, budget)
    samples, _ = _loss_samples(engine, M, Y, probes, budget, solve)
    return float(samples.mean())


def loss_and_grad(params: HyperParams | None, Y, engine, M, probes: ProbeSet,
                  budget: SolverBudget = SolverBudget()) -> LossGrad:
    """Loss and its gradient w.r.t. the raw hyperparameters.

    Component j of the value-space gradient is
    1/2 (-alpha^T D_j alpha + mean_i w_i^T D_j z_i), w_i = pcg(Khat, z_i),
    with D_j the derivative of Khat; the softplus chain rule maps it to raw.
    """
    _sync(engine, params)
    solve = _alpha(engine, M, Y, budget)
    alpha = solve.x
    loss_samples, slq = _loss_samples(engine, M, Y, probes, budget, solve)

    data_terms = np.array([alpha @ engine.matvec(alpha, op) for op in GRAD_OPERATORS])
    khat = engine.operator(Operator.KHAT)

    def probe_terms(z):
        w = pcg(khat, M.apply_inverse, z, budget.cg_tol, budget.cg_iters).x
        return [w @ engine.matvec(z, op) for op in GRAD_OPERATORS]

    if budget.n_jobs == 1:
        traces = np.array([probe_terms(z) for z in probes])
    else:
        traces = np.array(Parallel(n_jobs=budget.n_jobs, prefer="threads")(
            delayed(probe_terms)(z) for z in probes))
    grad_samples = 0.5 * (traces - data_terms[None, :])
    grad_values = grad_samples.mean(axis=0)
    grad = grad_values * engine.params.chain()
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(loss_samples))):
        raise SolverError("loss or gradient estimate is not finite", solve)
    return LossGrad(float(loss_samples.mean()), grad, grad_values, loss_samples, grad_samples, solve, slq)


def grad(params: HyperParams | None, Y, engine, M, probes: ProbeSet,
         budget: SolverBudget = SolverBudget()) -> np.ndarray:
    return loss_and_grad(params, Y, engine, M, probes, budget).grad
