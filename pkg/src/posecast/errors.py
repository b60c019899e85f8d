"""Exception types shared across the package."""


class PosecastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PosecastError):
    """Operand dimensions are inconsistent."""


class NumericError(PosecastError):
    """A computation produced or received non-finite values."""


class ConfigError(PosecastError):
    """A configuration value violates its contract."""


class InputError(PosecastError):
    """Caller-supplied data violates a precondition."""


class ParseError(PosecastError):
    """A data file could not be parsed."""
