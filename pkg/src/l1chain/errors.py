"""Exception hierarchy shared by every processing stage.

Each class maps to a distinct CLI exit code (see ``l1chain.cli``).
"""


class L1ChainError(Exception):
    """Base class for all processing errors."""

    exit_code = 1


class DomainError(L1ChainError, ValueError):
    """Input outside the domain of an operation."""

    exit_code = 2


class DataError(L1ChainError, ValueError):
    """Malformed or inconsistent input data (e.g. non-monotone timestamps)."""

    exit_code = 3


class NoIntersectionError(DomainError):
    """A line of sight misses the (height-offset) ellipsoid."""

    exit_code = 4


class NotVisibleError(DomainError):
    """Ground point is not imaged within the requested window."""

    exit_code = 4


class ConvergenceError(L1ChainError, RuntimeError):
    """Iterative solver failed to converge."""

    exit_code = 5

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateReferenceError(DomainError):
    exit_code = 6


class InsufficientDataError(L1ChainError, ValueError):
    exit_code = 7


class InsufficientTiePointsError(InsufficientDataError):
    exit_code = 7


class InvalidTimingError(DomainError):
    exit_code = 8


class ConditioningError(L1ChainError, ArithmeticError):
    exit_code = 9


class CalibrationMissingError(L1ChainError, KeyError):
    exit_code = 10

    def __str__(self):
        return Exception.__str__(self)


class CalibrationRejectedError(L1ChainError, ValueError):
    exit_code = 11


class InvalidRegionError(DomainError):
    exit_code = 12


class ContainerError(L1ChainError, IOError):
    """Base for product container read failures."""

    exit_code = 13


class ChecksumError(ContainerError):
    exit_code = 14


class VersionError(ContainerError):
    exit_code = 15


class TruncatedError(ContainerError):
    exit_code = 16


class ConfigError(L1ChainError, ValueError):
    exit_code = 17


class GeometryMismatchError(L1ChainError, ValueError):
    exit_code = 18
