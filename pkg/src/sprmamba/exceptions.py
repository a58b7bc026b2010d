"""Exception hierarchy shared by every sub-module."""


class SprMambaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SprMambaError, ValueError):
    """An architectural or training setting is invalid."""


class DimensionError(SprMambaError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class DomainError(SprMambaError, ValueError):
    """A numeric argument lies outside the domain of the operation."""


class DataError(SprMambaError, ValueError):
    """Labels, predictions or features are inconsistent."""


class FormatError(SprMambaError, ValueError):
    """A file does not follow the expected binary or text layout."""


class UsageError(SprMambaError, RuntimeError):
    """An API was called in a state where it cannot be honoured."""


class NumericalError(SprMambaError, FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""
