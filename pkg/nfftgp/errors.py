"""Exception hierarchy shared by every nfftgp module."""


class NfftGPError(Exception):
    """Root of all errors raised by nfftgp."""


class DomainError(NfftGPError, ValueError):
    """A point or parameter lies outside the domain an operation is defined on."""


class ParameterError(NfftGPError, ValueError):
    """Invalid configuration of a plan, kernel, policy or oracle."""


class ShapeError(NfftGPError, ValueError):
    """Array sizes do not match."""


class SolverError(NfftGPError, ArithmeticError):
    """A factorization or iterative solve failed.

    ``report`` holds whatever partial result was available when it failed
    (a SolveReport, a TrainTrace, ...), or None.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DataError(NfftGPError, ValueError):
    """Malformed input data file."""


class ConfigError(NfftGPError, ValueError):
    """Unknown or unparsable configuration."""
