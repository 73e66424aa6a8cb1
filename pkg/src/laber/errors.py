"""Exception types raised across the package."""


class LaberError(ValueError):
    """Base class for all errors raised by this package."""


class AllZeroError(LaberError):
    pass


class NonFiniteError(LaberError):
    pass


class ZeroProbabilityError(LaberError):
    pass


class LengthMismatchError(LaberError):
    pass


class OutOfRangeError(LaberError, IndexError):
    pass


class NegativePriorityError(LaberError):
    pass


class EmptyTreeError(LaberError):
    pass


class ShapeMismatchError(LaberError):
    pass


class InsufficientDataError(LaberError):
    pass


class ZeroSurrogateError(LaberError):
    pass


class GoalOnTrapError(LaberError):
    pass


class NotEnumerableError(LaberError):
    pass


class ConfigError(LaberError):
    """Invalid run configuration. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
