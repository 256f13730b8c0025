"""Replication checks for the fast summation, bounds, preconditioner and training experiments.

    python scripts/run_acceptance.py --out out/acceptance
    python scripts/run_acceptance.py --only matvec bounds --quick

Prints one verdict line per check and writes each check's table as CSV.
"""
import argparse
import os
import sys
import time

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from nfftgp import bench, bounds, precond  # noqa: E402
from nfftgp.errors import NfftGPError  # noqa: E402
from nfftgp.fastsum import AdditiveMatvecEngine, backend_deviation  # noqa: E402
from nfftgp.io import rng_for, save_csv  # noqa: E402
from nfftgp.kernels import (FeatureWindows, HyperParams, KernelSpec, Operator, dense_matrix,  # noqa: E402
                            dense_neg_log_likelihood)
from nfftgp.krylov import ProbeSet, SolverBudget, loss_and_grad  # noqa: E402
from nfftgp.synthetic import make_synthetic  # noqa: E402
from nfftgp.train import AdditiveGPRegressor, TrainConfig, rmse  # noqa: E402

WINDOWS6 = FeatureWindows(((0, 1, 2), (3, 4, 5)))
SINGLES6 = FeatureWindows(tuple((j,) for j in range(6)))

# max relative deviation of the fixed m=32 tables on WINDOWS6, n=2000
DEVIATION_3D = {
    ("gaussian", 0.05): 2.7e-2, ("gaussian", 0.2): 1.2e-7, ("gaussian", 0.5): 3.1e-3,
    ("gaussian", 1.0): 1.08e-2, ("gaussian", 2.0): 1.08e-2,
    ("matern12", 0.05): 0.162, ("matern12", 0.2): 1.7e-2, ("matern12", 0.5): 7.0e-3,
    ("matern12", 1.0): 7.1e-3, ("matern12", 2.0): 7.5e-3,
}


def log(msg: str):
    print(msg, flush=True)


def check_matvec(args):
    n = 500 if args.quick else 2000
    rng = rng_for(args.seed, "bench")
    X = rng.uniform(0.0, 1.0, size=(n, 6))
    v = rng.standard_normal(n)
    rows = []
    for family, tol in (("gaussian", 1e-4), ("matern12", 1e-3)):
        for ell in (0.05, 0.2, 0.5, 1.0, 2.0):
            for windows, table_tol in ((SINGLES6, 1e-4), (WINDOWS6, None)):
                spec = KernelSpec(family, windows, HyperParams.from_values(np.sqrt(0.5), ell, 0.1))
                exact = AdditiveMatvecEngine(spec, X, backend="exact")
                started = time.perf_counter()
                fast = AdditiveMatvecEngine(spec, X, backend="nfft", m=32, table_tol=table_tol)
                err = backend_deviation(fast, exact, v)
                ceiling = tol if table_tol else max(tol, 2.0 * DEVIATION_3D[family, ell])
                dim = max(len(w) for w in windows)
                rows.append((int(family == "matern12"), dim, ell, max(fast.window_m), err, ceiling,
                             time.perf_counter() - started))
    frame = pd.DataFrame(rows, columns=["matern", "window_dim", "ell", "m", "max_rel_err", "ceiling", "seconds"])
    ok = bool((frame["max_rel_err"] <= frame["ceiling"]).all() and (frame["seconds"] <= 10).all())
    return ok, frame, f"worst rel err {frame['max_rel_err'].max():.2e}"


def check_bounds(args):
    m_values = (16, 32) if args.quick else (16, 32, 64)
    ell_grid = np.logspace(-2, 1, 5 if args.quick else 13)
    n_samples, columns = (500, 20) if args.quick else (4000, 250)
    frames = [bounds.verify_bounds(f, m_values, ell_grid, n_samples, columns, seed=args.seed).to_frame()
              for f in bounds.BOUND_FAMILIES]
    frame = pd.concat(frames, ignore_index=True)
    ok = bool((frame["measured"] <= frame["bound"]).all())
    return ok, frame, f"max bound/measured ratio {frame['ratio'].max():.1e}"


def check_derivative(args):
    rng = rng_for(args.seed, "bench")
    X = rng.uniform(0.0, 1.0, size=(500, 6))
    rows = []
    for trial in range(3 if args.quick else 10):
        v = rng.standard_normal(500)
        ell, h = rng.uniform(0.2, 1.0), 1e-5
        spec = KernelSpec("gaussian", WINDOWS6, HyperParams.from_values(1.0, ell, 0.1))
        engine = AdditiveMatvecEngine(spec, X, m=32)
        dell = engine.matvec(v, Operator.DELL)
        side = [AdditiveMatvecEngine(spec.with_params(HyperParams.from_values(1.0, e, 0.1)), X, m=32,
                                     scaling=engine.scaling).matvec(v) for e in (ell + h, ell - h)]
        fd = (side[0] - side[1]) / (2 * h)
        rows.append((trial, ell, np.abs(fd - dell).max() / np.abs(dell).max()))
    frame = pd.DataFrame(rows, columns=["trial", "ell", "rel_dev"])
    return bool((frame["rel_dev"] <= 1e-5).all()), frame, f"worst {frame['rel_dev'].max():.2e}"


def check_logdet(args):
    rng = rng_for(args.seed, "bench")
    X = rng.uniform(size=(50, 6))
    rows = []
    for trial in range(10):
        params = HyperParams.from_values(*rng.uniform([0.3, 0.1, 0.1], [1.5, 1.0, 0.5]))
        spec = KernelSpec("gaussian", WINDOWS6, params)
        K = dense_matrix(spec, X)
        M = precond.build(spec, X, k_per_window=5, fill=10)
        C_inv = np.column_stack([M.apply_factor_inverse(e) for e in np.eye(50)])
        inner = np.log(np.linalg.eigvalsh(C_inv @ K @ C_inv.T)).sum()
        rows.append((trial, abs(np.linalg.slogdet(K)[1] - M.logdet() - inner)))
    frame = pd.DataFrame(rows, columns=["trial", "gap"])
    return bool((frame["gap"] <= 1e-8).all()), frame, f"worst gap {frame['gap'].max():.2e}"


def check_gradient(args):
    rng = rng_for(args.seed, "bench")
    X = rng.uniform(size=(40, 6))
    Y = np.sin(3 * X[:, 0]) + X[:, 4] + 0.1 * rng.standard_normal(40)
    spec = KernelSpec("gaussian", WINDOWS6, HyperParams.from_values(0.8, 0.4, 0.3))
    engine = AdditiveMatvecEngine(spec, X, backend="exact")
    M = precond.build(spec, X, 5, 10)
    probes = ProbeSet.rademacher(40, 200, rng_for(args.seed, "probes"))
    result = loss_and_grad(None, Y, engine, M, probes, SolverBudget(400, 1e-10, 40))
    raw, h, fd = np.array(spec.params.raw), 1e-5, np.empty(3)
    for j in range(3):
        step = np.eye(3)[j] * h
        fd[j] = (dense_neg_log_likelihood(spec.with_params(HyperParams(tuple(raw + step))), X, Y)
                 - dense_neg_log_likelihood(spec.with_params(HyperParams(tuple(raw - step))), X, Y)) / (2 * h)
    rel = np.abs(result.grad - fd) / np.abs(fd)
    frame = pd.DataFrame({"component": ["sigma_f", "ell", "sigma_eps"], "estimate": result.grad,
                          "finite_difference": fd, "rel_dev": rel})
    return bool((rel <= 0.02).all()), frame, f"worst {rel.max():.2%}"


def check_precond(args):
    grid = np.logspace(-1, 1, 5 if args.quick else 9)
    frame, _ = bench.precond_bench("hypercube", ell_grid=grid, rank=300, fill=100, tol=1e-4, maxit=200,
                                   seed=args.seed)
    ok = bool((frame["pcg_iters"] <= frame["cg_iters"]).all()
              and (frame.loc[frame["cg_iters"] > 50, "pcg_iters"] < frame.loc[frame["cg_iters"] > 50,
                                                                               "cg_iters"]).all())
    return ok, frame, f"cg {frame['cg_iters'].sum()} vs pcg {frame['pcg_iters'].sum()} iterations"


def check_variance(args):
    frame = bench.variance_bench(replications=10 if args.quick else 50, max_iters=10, rank=100, fill=100,
                                 n_probes=5, seed=args.seed)
    wide = frame.pivot(index="iters", columns="precond", values=["loss_var", "dell_var"])
    ok = bool((wide["loss_var"][1] <= wide["loss_var"][0]).all()
              and (wide["dell_var"][1] <= wide["dell_var"][0]).all())
    return ok, frame, "AAFN variance <= plain variance at every iteration count" if ok else "variance not reduced"


def _fit_pair(data, cfg, windows, seed):
    X_tr, Y_tr, X_te, Y_te = data.split(seed)
    out = {}
    for backend in ("nfft", "exact"):
        model = AdditiveGPRegressor(cfg.replace(backend=backend), windows).fit(X_tr, Y_tr)
        out[backend] = (np.array(model.trace_.loss), rmse(model.predict(X_te), Y_te))
    return out


def check_grf_1d(args):
    rows, ok = [], True
    for family in ("gaussian", "matern12"):
        data = make_synthetic("grf1d", args.seed, family=family)
        cfg = TrainConfig(family=family, max_iter=20 if args.quick else 100, lr=0.05, seed=args.seed)
        fits = _fit_pair(data, cfg, data.windows, args.seed)
        trace_dev = float(np.max(np.abs(fits["nfft"][0] - fits["exact"][0]) / np.abs(fits["exact"][0])))
        rmse_dev = abs(fits["nfft"][1] - fits["exact"][1])
        ok &= trace_dev <= 0.01 and rmse_dev <= 0.01
        rows.append((int(family == "matern12"), fits["nfft"][1], fits["exact"][1], trace_dev))
    frame = pd.DataFrame(rows, columns=["matern", "rmse_nfft", "rmse_exact", "max_trace_rel_dev"])
    return ok, frame, f"rmse nfft/exact {frame['rmse_nfft'].round(4).tolist()} / {frame['rmse_exact'].round(4).tolist()}"


def check_grf_20d(args):
    windows = FeatureWindows(((5, 3, 4), (2, 1, 0)))
    rows, ok = [], True
    for family, target in (("gaussian", 0.14), ("matern12", 0.15)):
        data = make_synthetic("grf20d", args.seed, family=family)
        cfg = TrainConfig(family=family, max_iter=30 if args.quick else 200, lr=0.05, seed=args.seed)
        fits = _fit_pair(data, cfg, windows, args.seed)
        nfft_rmse, exact_rmse = fits["nfft"][1], fits["exact"][1]
        ok &= abs(nfft_rmse - target) <= 0.05 and abs(nfft_rmse - exact_rmse) <= 0.05
        rows.append((int(family == "matern12"), target, nfft_rmse, exact_rmse))
    frame = pd.DataFrame(rows, columns=["matern", "target", "rmse_nfft", "rmse_exact"])
    return ok, frame, f"rmse {frame['rmse_nfft'].round(4).tolist()}"


CHECKS = {
    "matvec": check_matvec,
    "bounds": check_bounds,
    "derivative": check_derivative,
    "logdet": check_logdet,
    "gradient": check_gradient,
    "precond": check_precond,
    "variance": check_variance,
    "grf1d": check_grf_1d,
    "grf20d": check_grf_20d,
}


def main():
    ap = argparse.ArgumentParser(description="Run the replication checks and print a verdict per check")
    ap.add_argument("--out", default="out/acceptance", help="Directory for the per-check CSV tables")
    ap.add_argument("--only", nargs="+", choices=list(CHECKS), help="Run only these checks")
    ap.add_argument("--quick", action="store_true", help="Smaller grids and fewer replications")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    failed = 0
    for name in args.only or list(CHECKS):
        started = time.perf_counter()
        try:
            ok, frame, detail = CHECKS[name](args)
        except NfftGPError as exc:
            ok, frame, detail = False, None, f"{type(exc).__name__}: {exc}"
        if frame is not None:
            save_csv(frame, os.path.join(args.out, f"{name}.csv"))
        mark = "✅" if ok else "❌"
        log(f"{mark} {name:<10} {detail} ({time.perf_counter() - started:.1f}s)")
        failed += not ok
    log(f"{len(args.only or CHECKS) - failed} passed, {failed} failed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
