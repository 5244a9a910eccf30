"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes (config 2, missing input 3,
numeric failure 4); the HTTP service maps them onto status codes.
"""


class MemtopoError(Exception):
    """Base class for package errors."""


class DimensionError(MemtopoError):
    """Shape/index mismatch or invalid dimensions."""


class StateError(MemtopoError):
    """Operation not allowed in the current device/trainer state."""


class ArgumentError(MemtopoError):
    """Invalid argument value."""


class ParseError(MemtopoError):
    """Malformed input file; message carries the position."""


class ConfigError(MemtopoError):
    """Invalid run configuration."""


class MissingInputError(MemtopoError):
    """A required file/dataset/snapshot does not exist."""


class NumericError(MemtopoError):
    """Non-finite loss or other numeric failure during a run."""
