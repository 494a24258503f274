"""Exception types mapped onto CLI exit codes."""


class VitalgridError(Exception):
    """Base class for package errors."""


class ConfigError(VitalgridError):
    """Invalid configuration or usage (CLI exit code 1)."""


class DataError(VitalgridError):
    """Unusable input data: missing files, bad schemas, empty cohorts (exit code 2)."""


class InvariantError(VitalgridError):
    """An internal invariant was violated (exit code 3)."""
