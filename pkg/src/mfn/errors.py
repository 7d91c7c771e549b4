"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: UsageError -> 1,
DataError -> 2, NumericError -> 3.
"""


class MfnError(Exception):
    """Base class for all package-specific errors."""


class UsageError(MfnError):
    """Bad arguments or configuration supplied by the caller."""


class DataError(MfnError):
    """Missing, malformed, or inconsistent input data."""


class NumericError(MfnError):
    """Non-finite values or other numeric failures during computation."""
