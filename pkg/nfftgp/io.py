"""CSV ingestion and emission, windows files, run configuration and manifests."""
from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import platform
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, NfftGPError
from .kernels import FeatureWindows

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
RNG_STREAMS = ("probes", "grouping", "synthetic", "split", "bench", "bounds")


def rng_for(seed, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of one run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


# ---------------------------------------------------------
# CSV
# ---------------------------------------------------------
def _parse_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def load_csv(path, label_column: str | None = None):
    """Read a numeric CSV with a header row; returns (X, Y, feature_names).

    The label column defaults to the last one. Cells must parse as finite
    floats; rows are numbered from 1 below the header in error messages.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                            encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if frame.shape[1] < 2:
        raise DataError(f"{path}: need at least one feature column and one label column")
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no data rows")

    values = np.empty(frame.shape, dtype=float)
    for j, col in enumerate(frame.columns):
        cells = frame[col]
        missing = cells.isna()
        if missing.any():
            row = int(np.flatnonzero(missing.to_numpy())[0]) + 1
            raise DataError(f"{path}: row {row} has too few fields (column {col!r} missing)")
        numeric = cells.str.strip().map(_parse_float).to_numpy(dtype=float)
        bad = ~np.isfinite(numeric)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataError(f"{path}: row {row + 1}, column {col!r}: "
                            f"{cells.iloc[row]!r} is not a finite number")
        values[:, j] = numeric

    label = frame.columns[-1] if label_column is None else label_column
    if label not in frame.columns:
        raise DataError(f"{path}: label column {label!r} not found in {list(frame.columns)}")
    j = list(frame.columns).index(label)
    features = [c for c in frame.columns if c != label]
    return np.delete(values, j, axis=1), values[:, j], features


def save_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def dataset_frame(X, Y, feature_names=None, label: str = "y") -> pd.DataFrame:
    X = np.asarray(X, dtype=float)
    names = feature_names or [f"x{j + 1}" for j in range(X.shape[1])]
    frame = pd.DataFrame(X, columns=names)
    frame[label] = np.asarray(Y, dtype=float)
    return frame


# ---------------------------------------------------------
# windows files (1-based indices, one window per line)
# ---------------------------------------------------------
def parse_windows(text: str, source: str = "windows") -> FeatureWindows:
    windows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            idx = [int(tok) for tok in line.replace(";", ",").split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        if any(i < 1 for i in idx):
            raise ConfigError(f"{source}:{lineno}: feature indices are 1-based, got {idx}")
        windows.append(tuple(i - 1 for i in idx))
    try:
        return FeatureWindows(tuple(windows))
    except NfftGPError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def read_windows_file(path) -> FeatureWindows:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"windows file not found: {path}")
    return parse_windows(path.read_text(encoding="utf-8"), str(path))


def format_windows(windows: FeatureWindows) -> str:
    return "".join(",".join(str(i) for i in w) + "\n" for w in windows.one_based())


def write_windows_file(windows: FeatureWindows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_windows(windows), encoding="utf-8")
    return path


# ---------------------------------------------------------
# configuration
# ---------------------------------------------------------
@dataclass(frozen=True)
class RunSettings:
    """Keys that steer commands rather than the model."""

    train_csv: str | None = None
    test_csv: str | None = None
    label_column: str | None = None
    out_dir: str = "out"
    model_path: str | None = None
    bench_n: tuple = (500, 1000, 2000)
    ell: float = 0.5
    bench_dataset: str = "hypercube"
    ell_grid: tuple | None = None
    m_values: tuple = (16, 32, 64)
    bound_family: str = "both"
    bound_points: int = 4000
    pair_budget: int = 1_000_000
    components: bool = False
    spectra: bool = False
    replications: int = 50
    bench_iters: int = 10
    bench_rank: int | None = None
    bench_tol: float = 1e-4
    bench_maxit: int = 200
    synthetic: str = "grf1d"
    trials: int = 1


_LIST_INT = {"bench_n", "m_values"}
_LIST_FLOAT = {"ell_grid", "init_raw"}


def _field_types(cls) -> dict:
    return {f.name: str(f.type) for f in dataclasses.fields(cls)}


def known_keys() -> dict:
    from .train import TrainConfig

    return {**_field_types(TrainConfig), **_field_types(RunSettings)}


def coerce_value(key: str, raw, annotation: str | None = None):
    """Turn a config string into the type of the field ``key``."""
    annotation = annotation if annotation is not None else known_keys().get(key)
    if annotation is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "None" in annotation and text.lower() in ("", "none"):
        return None
    try:
        if key == "windows":
            return tuple(parse_windows(text.replace(";", "\n"), "windows").windows)
        if key in _LIST_INT:
            return tuple(int(float(t)) for t in text.replace(";", ",").split(",") if t.strip())
        if key in _LIST_FLOAT:
            return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
        if annotation.startswith("bool"):
            states = configparser.ConfigParser.BOOLEAN_STATES
            if text.lower() not in states:
                raise ValueError(f"not a boolean: {text!r}")
            return states[text.lower()]
        if annotation.startswith("int"):
            value = float(text)
            if value != int(value):
                raise ValueError(f"not an integer: {text!r}")
            return int(value)
        if annotation.startswith("float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}") from exc
    return text


def read_config(path) -> dict:
    """Flat ``key = value`` file (``#`` comments) as a dict of raw strings."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = dict(parser["run"])
    unknown = sorted(set(raw) - set(known_keys()))
    if unknown:
        raise ConfigError(f"{path}: unknown configuration keys {unknown}")
    return raw


def resolve_config(file_values: dict | None = None, overrides: dict | None = None):
    """Defaults < config file < explicit overrides; returns (TrainConfig, RunSettings)."""
    from .train import TrainConfig

    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is not None:
                merged[key] = coerce_value(key, value)
    unknown = sorted(set(merged) - set(known_keys()))
    if unknown:
        raise ConfigError(f"unknown configuration keys {unknown}")
    train_keys = set(_field_types(TrainConfig))
    try:
        train = TrainConfig(**{k: v for k, v in merged.items() if k in train_keys})
    except NfftGPError as exc:
        raise ConfigError(str(exc)) from exc
    run = RunSettings(**{k: v for k, v in merged.items() if k not in train_keys})
    return train, run


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_record(*configs) -> dict:
    return {key: _plain(value) for cfg in configs for key, value in dataclasses.asdict(cfg).items()}


def write_manifest(out_dir, command: str, record: dict, seed) -> Path:
    import joblib
    import scipy
    import sklearn

    from . import __version__

    manifest = {
        "command": command,
        "config": record,
        "seed": seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
            "pandas": pd.__version__,
            "joblib": joblib.__version__,
            "nfftgp": __version__,
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    return path
