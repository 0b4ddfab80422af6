"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (see cli.EXIT_CODES).
"""


class ShapeError(ValueError):
    """Operand dimensions are inconsistent."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


class UsageError(RuntimeError):
    """An operation was called in a state or order it does not support."""


class DataError(RuntimeError):
    """Corpus, vocabulary, or token-id input is invalid."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class ConfigError(RuntimeError):
    """A run configuration is missing, malformed, or contains unknown keys."""
