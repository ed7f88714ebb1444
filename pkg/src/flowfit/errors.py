"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, ``DataError``
exits 2, ``NumericalError`` exits 3.
"""


class FlowfitError(Exception):
    """Base class for all flowfit errors."""


class DataError(FlowfitError):
    """Malformed or inconsistent input data (files or in-memory series)."""


class NumericalError(FlowfitError):
    """Numerical failure inside a solver (non-SPD covariance, divergence...)."""
