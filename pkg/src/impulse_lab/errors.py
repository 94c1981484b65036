"""Exception types shared across the package."""


class LabError(Exception):
    """Base class for all errors raised by impulse_lab."""


class ConfigurationError(LabError, ValueError):
    """Inconsistent sizes, bad intervals, malformed scenario files."""


class DomainError(LabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(LabError, ArithmeticError):
    """A solver failed to converge or produced an unusable result."""
