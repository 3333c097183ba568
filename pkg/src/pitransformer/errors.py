"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3,
``ConfigError`` -> 1.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Malformed or unusable input data."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Argument outside an operation's mathematical domain."""
