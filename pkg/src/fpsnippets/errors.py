"""Exception hierarchy. Each class maps onto one CLI exit code."""


class FPSnippetsError(Exception):
    exit_code = 1


class ConfigError(FPSnippetsError):
    """Bad configuration, unreadable input, missing columns or prerequisites."""

    exit_code = 1


class DataError(FPSnippetsError):
    """Input data that cannot be processed (vocabulary mismatch, NaNs...)."""

    exit_code = 2


class InvariantError(FPSnippetsError):
    """Internal invariant violation; indicates a bug, not bad input."""

    exit_code = 3


class UrlError(ValueError):
    """A URL without a usable host. Recoverable: callers skip or bucket."""


class KeyConflictError(DataError):
    """append_rows saw a snippet key already present in the matrix."""


class NotEvaluable(Exception):
    """A heuristic lacks the value/arguments data it needs."""
