"""Exception types shared across the package.

The CLI maps these onto process exit codes (config -> 2, data -> 3,
numerical -> 4), so library code should raise the most specific one.
"""


class ConfigError(ValueError):
    """Invalid configuration (bad field value, inconsistent options)."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""
