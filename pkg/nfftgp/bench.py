"""Benchmark drivers behind the ``*-bench`` commands and ``train --trials``.

Each driver returns a pandas DataFrame whose columns are the CSV columns the
CLI writes.
"""
from __future__ import annotations

import logging
import time

import numpy as np
import pandas as pd
import scipy.linalg as sla

from . import precond
from .errors import ParameterError
from .fastsum import backend_deviation
from .io import rng_for
from .kernels import FeatureWindows, HyperParams, KernelSpec, Operator, dense_matrix
from .krylov import ProbeSet, SolverBudget, loss_and_grad, pcg
from .synthetic import make_synthetic
from .train import AdditiveGPRegressor, TrainConfig, rmse

log = logging.getLogger(__name__)

MATVEC_DIM = 6
PRECOND_DATASETS = ("discs", "hypercube")
DEFAULT_ELL_GRID = tuple(np.logspace(-1, 1, 9))
VARIANCE_TOL = 1e-300


def _params(sigma_f2, ell, sigma_eps2):
    return HyperParams.from_values(np.sqrt(sigma_f2), ell, np.sqrt(sigma_eps2))


# ---------------------------------------------------------
# fast summation vs dense products
# ---------------------------------------------------------
def matvec_bench(n_values, family="gaussian", ell: float = 0.5, config: TrainConfig = TrainConfig(),
                 seed: int = 0) -> pd.DataFrame:
    """Relative max deviation and wall time of the NFFT product against the dense one.

    ``backend`` is 1 for the NFFT rows and 0 for the dense reference rows.
    """
    rng = rng_for(seed, "bench")
    windows = FeatureWindows(((0, 1, 2), (3, 4, 5)))
    params = _params(1.0 / windows.P, ell, 0.01)
    rows = []
    for n in n_values:
        n = int(n)
        X = rng.uniform(0.0, 1.0, size=(n, MATVEC_DIM))
        v = rng.standard_normal(n)
        spec = KernelSpec(family, windows, params)
        engines = {backend: config.replace(backend=backend).engine(spec, X) for backend in ("exact", "nfft")}
        for backend, engine in engines.items():
            started = time.perf_counter()
            engine.matvec(v)
            seconds = time.perf_counter() - started
            err = 0.0 if backend == "exact" else backend_deviation(engine, engines["exact"], v)
            rows.append((n, int(backend == "nfft"), err, seconds))
            log.info("matvec n=%d %s: rel err %.3e in %.3fs", n, backend, err, seconds)
    return pd.DataFrame(rows, columns=["n", "backend", "max_rel_err", "seconds"])


# ---------------------------------------------------------
# CG iterations with and without AAFN
# ---------------------------------------------------------
def precond_bench(dataset: str = "hypercube", family="gaussian", ell_grid=None, rank: int | None = None,
                  fill: int = 100, tol: float = 1e-4, maxit: int = 200, config: TrainConfig = TrainConfig(),
                  seed: int = 0, spectra: bool = False, backend: str = "exact"):
    """CG and AAFN-PCG iteration counts on one synthetic point set over a sweep of ell.

    ``rank`` is the total landmark count, split evenly over the windows.
    The solves run on ``backend`` (dense products by default), one engine
    for the whole sweep. Returns (iterations frame, spectra frame or None).
    """
    if dataset not in PRECOND_DATASETS:
        raise ParameterError(f"precond bench dataset must be one of {PRECOND_DATASETS}, got {dataset!r}")
    data = make_synthetic(dataset, seed)
    P = data.windows.P
    rank = rank if rank is not None else (300 if dataset == "hypercube" else 100)
    k_per_window = max(1, int(np.ceil(rank / P)))
    ell_grid = DEFAULT_ELL_GRID if ell_grid is None else ell_grid
    config = config.replace(backend=backend)
    engine = None
    rows, spectrum = [], {}
    for ell in ell_grid:
        spec = KernelSpec(family, data.windows, _params(data.meta["sigma_f2"], float(ell),
                                                        data.meta["sigma_eps2"]))
        if engine is None:
            engine = config.engine(spec, data.X)
        else:
            engine.set_params(spec.params)
        khat = engine.operator(Operator.KHAT)
        plain = pcg(khat, precond.IdentityPrecond(engine.n).apply_inverse, data.Y, tol, maxit)
        M = precond.build(spec, data.X, k_per_window, fill, config.n_jobs)
        pre = pcg(khat, M.apply_inverse, data.Y, tol, maxit)
        rows.append((float(ell), plain.iterations, pre.iterations))
        log.info("ell=%.4g: cg %d, aafn-pcg %d", ell, plain.iterations, pre.iterations)
        if spectra:
            K = dense_matrix(spec, data.X, Operator.KHAT, cap=config.oracle_cap)
            spectrum[f"ell={float(ell):.6g}"] = np.sort(sla.eigvalsh(K))[::-1]
    frame = pd.DataFrame(rows, columns=["ell", "cg_iters", "pcg_iters"])
    return frame, (pd.DataFrame(spectrum) if spectra else None)


# ---------------------------------------------------------
# estimator variance with and without AAFN
# ---------------------------------------------------------
def variance_bench(replications: int = 50, max_iters: int = 10, rank: int = 100, fill: int = 100,
                   n_probes: int = 5, config: TrainConfig = TrainConfig(), seed: int = 0) -> pd.DataFrame:
    """Sample mean and variance of the loss and d/d ell estimates over seeded probe sets.

    For every count t in 1..max_iters both CG and Lanczos run exactly t
    steps. ``precond`` is 1 for AAFN and 0 for the identity.
    """
    data = make_synthetic("sine_exp", seed)
    meta = data.meta
    spec = KernelSpec(config.family, data.windows, _params(meta["sigma_f2"], meta["ell"], meta["sigma_eps2"]))
    engine = config.engine(spec, data.X)
    k_per_window = max(1, int(np.ceil(rank / data.windows.P)))
    preconds = {1: precond.build(spec, data.X, k_per_window, fill, config.n_jobs),
                0: precond.IdentityPrecond(engine.n)}
    samples = {(t, flag): ([], []) for t in range(1, max_iters + 1) for flag in preconds}
    for rep in range(replications):
        probes = ProbeSet.rademacher(engine.n, n_probes, rng_for(seed + rep, "probes"), seed=seed + rep)
        for t in range(1, max_iters + 1):
            budget = SolverBudget(cg_iters=t, cg_tol=VARIANCE_TOL, lanczos_steps=t, n_jobs=config.n_jobs)
            for flag, M in preconds.items():
                step = loss_and_grad(None, data.Y, engine, M, probes, budget)
                losses, dells = samples[(t, flag)]
                losses.append(step.loss)
                dells.append(step.grad_values[1])
        log.info("variance bench: replication %d/%d done", rep + 1, replications)
    ddof = 1 if replications > 1 else 0
    rows = [(t, flag, np.mean(lo), np.var(lo, ddof=ddof), np.mean(de), np.var(de, ddof=ddof))
            for (t, flag), (lo, de) in samples.items()]
    return pd.DataFrame(rows, columns=["iters", "precond", "loss_mean", "loss_var", "dell_mean", "dell_var"])


# ---------------------------------------------------------
# repeated training runs
# ---------------------------------------------------------
def repeated_trials(X, Y, X_test, Y_test, config: TrainConfig, trials: int, windows=None) -> pd.DataFrame:
    """Fit with seeds seed..seed+trials-1; one row per trial with its test RMSE.

    ``final_loss`` is the last traced loss and is left out when no Adam step ran.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    rows = []
    for k in range(trials):
        cfg = config.replace(seed=config.seed + k)
        model = AdditiveGPRegressor(cfg, windows).fit(X, Y)
        score = rmse(model.predict(X_test), Y_test)
        rows.append((k, cfg.seed, score, model.trace_.loss[-1] if model.trace_.loss else np.nan))
        log.info("trial %d (seed %d): rmse %.6f", k, cfg.seed, score)
    frame = pd.DataFrame(rows, columns=["trial", "seed", "rmse", "final_loss"])
    return frame.dropna(axis=1, how="all")


def trial_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """One row: trial count, mean and sample std of the RMSE (std 0 for a single trial)."""
    scores = frame["rmse"].to_numpy(dtype=float)
    spread = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return pd.DataFrame([{"trials": len(scores), "first_seed": int(frame["seed"].iloc[0]),
                          "rmse_mean": float(scores.mean()), "rmse_std": spread}])
