"""
Exception hierarchy for ICRED.

Every failure the CLI reports maps onto one of these classes; the exit code
lives on the class so the command layer does not need a lookup table.
"""


class IcredError(Exception):
    """Base class for all ICRED errors."""

    exit_code: int = 1


class ConfigError(IcredError, ValueError):
    """Invalid or missing configuration (config keys, rule files, lexicons)."""

    exit_code = 2


class DataError(IcredError, ValueError):
    """Unreadable, empty or malformed input data."""

    exit_code = 2


class LoadError(IcredError, ValueError):
    """Checkpoint could not be restored; the message names the field or parameter."""

    exit_code = 2


class DimensionError(IcredError, ValueError):
    """Shape mismatch between tensors or parameters."""


class DomainError(IcredError, ValueError):
    """Argument outside the domain of an operation (empty vectors, empty lists)."""


class ContractError(IcredError, ValueError):
    """A precondition of an operation was violated by the caller."""


class SizingError(IcredError, ValueError):
    """Too few items to perform the requested partition."""

    exit_code = 2


class NumericalError(IcredError, ArithmeticError):
    """A computation produced NaN or infinite values."""

    exit_code = 3
