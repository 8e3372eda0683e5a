class BMCDError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(BMCDError, ValueError):
    pass


class DomainError(BMCDError, ValueError):
    pass


class ExtrapolationError(BMCDError, ValueError):
    pass


class ParameterError(BMCDError, ValueError):
    pass


class InputError(BMCDError, ValueError):
    pass


class NumericError(BMCDError, ArithmeticError):
    pass


class StageDependencyError(BMCDError, FileNotFoundError):
    """A CLI stage was run before the stage producing its inputs."""
