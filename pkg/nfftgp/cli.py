"""Command-line entry point: ``python -m nfftgp <command> [--config run.cfg] [--key value ...]``.

Every configuration key is also a flag, spelled with underscores or dashes
(``--max_iter`` / ``--max-iter``). Flags override the config file, which
overrides the defaults. Results land in ``out_dir`` next to a manifest.json.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import dump, load

from . import bench
from .bounds import BOUND_FAMILIES, verify_bounds
from .errors import ConfigError, DataError, NfftGPError
from .grouping import WindowSelector
from .io import (config_record, dataset_frame, known_keys, load_csv, read_config, resolve_config,
                 save_csv, write_manifest, write_windows_file)
from .synthetic import SYNTHETIC_NAMES, make_synthetic
from .train import AdditiveGPRegressor, rmse

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
DEFAULT_BOUND_ELL_GRID = tuple(np.logspace(-2, 1, 13))

HELP = {
    "train_csv": "Training CSV (header row; label column last unless --label_column)",
    "test_csv": "Test CSV for predictions and RMSE",
    "out_dir": "Directory for all outputs (default out)",
    "model_path": "Fitted model written by train (model.joblib)",
    "windows": "Feature windows inline, 1-based, e.g. '1,2,3;4,5,6'",
    "windows_file": "Windows file, one comma-separated 1-based window per line",
    "window_source": "file | mis | en | all",
    "backend": "nfft | exact",
    "family": "gaussian | matern12",
    "max_iter": "Adam iterations (0 writes the initial parameters)",
    "seed": "Run seed; every random stream derives from it",
    "trials": "Repeat train with seeds seed..seed+trials-1 (needs test_csv)",
    "synthetic": f"Dataset for make-synthetic: {' | '.join(SYNTHETIC_NAMES)}",
    "bound_family": f"{' | '.join(BOUND_FAMILIES)} | both",
}


def log(msg: str):
    logger.info(msg)


def _wrote(path: Path, rows: int | None = None):
    log(f"✅ Wrote {path}" + (f" ({rows} rows)" if rows is not None else ""))


def _require(value, key: str, command: str):
    if value is None:
        raise ConfigError(f"{command} needs {key} (config key or --{key})")
    return value


# ---------------------------------------------------------
# commands
# ---------------------------------------------------------
def _params_frame(params) -> pd.DataFrame:
    sf, ell, se = params.values
    return pd.DataFrame([{"sigma_f": sf, "ell": ell, "sigma_eps": se, "raw_sigma_f": params.raw[0],
                          "raw_ell": params.raw[1], "raw_sigma_eps": params.raw[2]}])


def cmd_train(cfg, settings, out_dir: Path):
    X, Y, _ = load_csv(_require(settings.train_csv, "train_csv", "train"), settings.label_column)
    test = load_csv(settings.test_csv, settings.label_column) if settings.test_csv else None

    model = AdditiveGPRegressor(cfg).fit(X, Y)
    trace = model.trace_.to_frame()
    _wrote(save_csv(trace, out_dir / "trace.csv"), len(trace))
    _wrote(save_csv(_params_frame(model.params_), out_dir / "params.csv"), 1)
    _wrote(write_windows_file(model.windows_, out_dir / "windows.txt"))
    model_path = Path(settings.model_path) if settings.model_path else out_dir / "model.joblib"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    dump(model, model_path)
    log(f"✅ Model saved to {model_path}")

    if test is not None:
        X_test, Y_test, _ = test
        pred = model.predict_full(X_test)
        _wrote(save_csv(pred.to_frame(), out_dir / "predictions.csv"), len(Y_test))
        log(f"Test RMSE: {rmse(pred.mean, Y_test):.6f}")
    if settings.trials > 1:
        if test is None:
            raise ConfigError("train --trials needs test_csv")
        frame = bench.repeated_trials(X, Y, test[0], test[1], cfg, settings.trials, model.windows_)
        _wrote(save_csv(frame, out_dir / "trials.csv"), len(frame))
        _wrote(save_csv(bench.trial_summary(frame), out_dir / "trials_summary.csv"), 1)


def cmd_predict(cfg, settings, out_dir: Path):
    model_path = Path(_require(settings.model_path, "model_path", "predict"))
    if not model_path.is_file():
        raise DataError(f"model file not found: {model_path}")
    model = load(model_path)
    if not isinstance(model, AdditiveGPRegressor):
        raise DataError(f"{model_path} does not hold a fitted AdditiveGPRegressor")
    X, Y, _ = load_csv(_require(settings.test_csv, "test_csv", "predict"), settings.label_column)
    if X.shape[1] + 1 == model.n_features_in_:
        # unlabeled file: the last column is a feature
        X, Y = np.column_stack([X, Y]), None
    pred = model.predict_full(X)
    _wrote(save_csv(pred.to_frame(), out_dir / "predictions.csv"), len(pred.mean))
    if Y is not None:
        log(f"Test RMSE: {rmse(pred.mean, Y):.6f}")


def cmd_group_features(cfg, settings, out_dir: Path):
    X, Y, features = load_csv(_require(settings.train_csv, "train_csv", "group-features"),
                              settings.label_column)
    method = cfg.window_source if cfg.window_source in ("mis", "en") else "mis"
    selector = WindowSelector(method=method, n_bins=cfg.n_bins, lambda_en=cfg.lambda_en, rho=cfg.rho,
                              thres=cfg.thres, d_ratio=cfg.d_ratio, d_target=cfg.d_target,
                              subsample=cfg.group_subsample, random_state=cfg.seed).fit(X, Y)
    scores = selector.scores_
    rank = np.empty(len(scores), dtype=int)
    rank[scores.ranking] = np.arange(1, len(scores) + 1)
    frame = pd.DataFrame({"feature": np.arange(1, len(scores) + 1), "score": scores.scores, "rank": rank})
    _wrote(write_windows_file(selector.windows_, out_dir / "windows.txt"))
    _wrote(save_csv(frame, out_dir / "scores.csv"), len(frame))
    named = [[features[i] for i in w] for w in selector.windows_]
    log(f"{method.upper()} windows: {selector.windows_.one_based()} {named}")


def cmd_matvec_bench(cfg, settings, out_dir: Path):
    frame = bench.matvec_bench(settings.bench_n, cfg.family, settings.ell, cfg, cfg.seed)
    _wrote(save_csv(frame, out_dir / "matvec_bench.csv"), len(frame))


def cmd_precond_bench(cfg, settings, out_dir: Path):
    frame, spectra = bench.precond_bench(settings.bench_dataset, cfg.family, settings.ell_grid,
                                         settings.bench_rank, cfg.fill, settings.bench_tol,
                                         settings.bench_maxit, cfg, cfg.seed, settings.spectra)
    _wrote(save_csv(frame, out_dir / "precond_bench.csv"), len(frame))
    if spectra is not None:
        _wrote(save_csv(spectra, out_dir / "spectra.csv"), len(spectra))


def cmd_variance_bench(cfg, settings, out_dir: Path):
    rank = settings.bench_rank if settings.bench_rank is not None else 100
    frame = bench.variance_bench(settings.replications, settings.bench_iters, rank, cfg.fill,
                                 n_probes=5, config=cfg, seed=cfg.seed)
    _wrote(save_csv(frame, out_dir / "variance_bench.csv"), len(frame))


def cmd_verify_bounds(cfg, settings, out_dir: Path):
    families = BOUND_FAMILIES if settings.bound_family == "both" else (settings.bound_family,)
    ell_grid = settings.ell_grid if settings.ell_grid is not None else DEFAULT_BOUND_ELL_GRID
    columns = max(1, int(settings.pair_budget) // settings.bound_points)
    frames = []
    for family in families:
        report = verify_bounds(family, settings.m_values, ell_grid, settings.bound_points, columns,
                               seed=cfg.seed, components=settings.components)
        if not report.valid:
            logger.warning("%s: measured error exceeds the bound on some grid points", family)
        frames.append(report.to_frame())
    frame = pd.concat(frames, ignore_index=True)
    _wrote(save_csv(frame, out_dir / "bounds.csv"), len(frame))


def cmd_make_synthetic(cfg, settings, out_dir: Path):
    data = make_synthetic(settings.synthetic, cfg.seed)
    if data.n_train is None:
        _wrote(save_csv(dataset_frame(data.X, data.Y), out_dir / f"{data.name}.csv"), len(data.Y))
    else:
        X_tr, Y_tr, X_te, Y_te = data.split(cfg.seed)
        _wrote(save_csv(dataset_frame(X_tr, Y_tr), out_dir / f"{data.name}_train.csv"), len(Y_tr))
        _wrote(save_csv(dataset_frame(X_te, Y_te), out_dir / f"{data.name}_test.csv"), len(Y_te))
    _wrote(write_windows_file(data.windows, out_dir / f"{data.name}_windows.txt"))


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "group-features": cmd_group_features,
    "matvec-bench": cmd_matvec_bench,
    "precond-bench": cmd_precond_bench,
    "variance-bench": cmd_variance_bench,
    "verify-bounds": cmd_verify_bounds,
    "make-synthetic": cmd_make_synthetic,
}


def run(command: str, config=None, overrides: dict | None = None) -> int:
    """Run one command; ``config`` is a config file path or a dict of raw key/values."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {sorted(COMMANDS)}")
    file_values = read_config(config) if isinstance(config, (str, Path)) else dict(config or {})
    cfg, settings = resolve_config(file_values, overrides)
    out_dir = Path(settings.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("%s: writing to %s", command, out_dir)
    COMMANDS[command](cfg, settings, out_dir)
    write_manifest(out_dir, command, config_record(cfg, settings), cfg.seed)
    return 0


# ---------------------------------------------------------
# argument parsing
# ---------------------------------------------------------
def _key_flags(parser: argparse.ArgumentParser):
    for key, annotation in known_keys().items():
        names = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        extra = dict(nargs="?", const="true") if annotation.startswith("bool") else {}
        parser.add_argument(*names, dest=key, default=None, metavar=key.upper(),
                            help=HELP.get(key), **extra)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--log-level", "--log_level", dest="log_level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    _key_flags(common)

    ap = argparse.ArgumentParser(prog="nfftgp", description="NFFT-accelerated additive GP regression")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__name__.removeprefix("cmd_").replace("_", " "))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    overrides = {key: getattr(args, key) for key in known_keys()}
    try:
        return run(args.command, args.config, overrides)
    except (NfftGPError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr, flush=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
