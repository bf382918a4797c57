"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or flag combination (exit code 2)."""


class DataError(ValueError):
    """Invalid, inconsistent, or incompatible data artifacts (exit code 3)."""


class NumericError(RuntimeError):
    """Numerical failure such as a non-finite loss (exit code 4)."""
