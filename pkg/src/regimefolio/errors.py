"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class RegimefolioError(Exception):
    """Base class for all package errors."""


class ConfigError(RegimefolioError):
    """Invalid or inconsistent configuration. Collects offending keys."""

    def __init__(self, message, keys=None):
        super().__init__(message)
        self.keys = list(keys) if keys else []


class DataError(RegimefolioError):
    """Unusable input data: unreadable files, ordering violations, too few rows."""


class NumericalError(RegimefolioError):
    """Numerical failure: non-finite likelihoods, non-PSD matrices, solver breakdown.

    Recoverable inside the backtest loop (the engine holds previous weights).
    """
