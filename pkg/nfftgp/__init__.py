"""NFFT-accelerated additive Gaussian-process regression."""
from .errors import (ConfigError, DataError, DomainError, NfftGPError, ParameterError, ShapeError,
                     SolverError)
from .kernels import Family, FeatureWindows, HyperParams, KernelSpec, Operator
from .train import AdditiveGPRegressor, TrainConfig, adam_fit, predict

__version__ = "0.1.0"
