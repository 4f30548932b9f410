"""Exception hierarchy shared across the toolkit."""


class DivergescopeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DivergescopeError):
    """Invalid configuration or command usage (CLI exit code 1)."""


class DataError(DivergescopeError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class NumericalError(DivergescopeError):
    """Numerical failure such as a non-finite training loss (CLI exit code 3)."""
