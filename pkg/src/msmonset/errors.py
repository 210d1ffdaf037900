"""Exception hierarchy shared by the whole package."""


class MsmError(Exception):
    """Base class for all package errors."""


class ValidationError(MsmError, ValueError):
    """Invalid object (mixture, grid, parameter set) or argument."""


class SizeError(MsmError, ValueError):
    """Input is too short for the requested operation."""


class DegenerateDataError(MsmError, ValueError):
    """Input has zero spread where a positive variance is required."""


class NumericalSupportError(MsmError, ArithmeticError):
    """Some point lies outside the effective support of every component."""


class NumericalError(MsmError, ArithmeticError):
    """A numerical routine (quadrature, optimizer) failed to converge."""


class ConfigurationError(MsmError, ValueError):
    """Inconsistent run configuration."""
