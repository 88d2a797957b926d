"""Exception hierarchy.

Every error raised by the library derives from :class:`AptShieldError` and
carries an ``exit_code`` used by the command-line front end.
"""


class AptShieldError(Exception):
    exit_code = 2


class ShapeError(AptShieldError, ValueError):
    """Operand dimensions do not conform."""


class DataError(AptShieldError, ValueError):
    """Malformed or inconsistent input data."""


class SchemaError(DataError):
    pass


class DomainError(AptShieldError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NotFoundError(DomainError, LookupError):
    pass


class ConfigError(AptShieldError, ValueError):
    exit_code = 1


class NumericError(AptShieldError, ArithmeticError):
    exit_code = 3
