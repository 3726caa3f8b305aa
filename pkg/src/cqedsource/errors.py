"""Exception and warning types shared across the package."""


class CqedSourceError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(CqedSourceError, ValueError):
    """A parameter is out of its allowed domain."""


class DomainError(InvalidInputError):
    """An operation would divide by zero or leave its mathematical domain."""


class ConfigError(CqedSourceError, ValueError):
    """A configuration (file, grid, step size) violates a stated bound."""


class TruncationError(ConfigError):
    """A Fock-space truncation discards more probability than allowed."""


class NumericalInstabilityError(CqedSourceError, ArithmeticError):
    """An integrator broke a conservation law beyond its tolerance."""


class ModelValidityWarning(UserWarning):
    """The noise model is used outside the regime where it is meaningful."""


class OutputError(CqedSourceError, OSError):
    """Writing a result file failed."""
