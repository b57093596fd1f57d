"""
Exception hierarchy.

Every error raised by the package derives from PermcdError and from the
builtin exception a caller would naturally catch (ValueError for bad input,
ArithmeticError for numerical breakdown).
"""


class PermcdError(Exception):
    """Base class for all package errors"""


class InvalidParameterError(PermcdError, ValueError):
    """A dimension, range or normalization precondition was violated"""


class EnumerationLimitError(InvalidParameterError):
    """Exact enumeration over permutations was requested above the size cap"""


class NumericalDegeneracyError(PermcdError, ArithmeticError):
    """A factor that must be nonsingular turned out singular or non-finite"""


class EstimationError(PermcdError, ValueError):
    """A rate cannot be estimated from the supplied trace"""


class ConfigError(PermcdError, ValueError):
    """An experiment preset or CLI override is missing or invalid"""
