"""Exception hierarchy shared by every smforge module."""


class SmforgeError(Exception):
    """Base class for all library errors."""


class InvalidDataError(SmforgeError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class ShapeError(SmforgeError, ValueError):
    """Array dimensions do not agree with the operation's contract."""


class ConfigError(SmforgeError, ValueError):
    """A configuration violates its invariants."""


class UndefinedMetricError(SmforgeError, ValueError):
    """A metric or ratio has a zero reference and cannot be evaluated."""


class DivergenceError(SmforgeError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_good_state=None, iteration=None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.iteration = iteration


class FormatError(SmforgeError, ValueError):
    """A serialized file is malformed, truncated or of an unsupported version."""
