"""Shared exception types, mapped to CLI exit codes (config=1, data=2, numeric=3)."""


class ConfigError(ValueError):
    """Invalid configuration or usage."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A file could not be parsed; message carries the offending location."""


class NumericError(RuntimeError):
    """Non-finite values or other numeric failure during training."""
