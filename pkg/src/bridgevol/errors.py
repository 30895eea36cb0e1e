"""Exception types shared across the package."""


class BridgeVolError(Exception):
    """Base class for all package errors."""


class DomainError(BridgeVolError, ValueError):
    """An argument lies outside the region where a quantity is defined."""


class DegenerateSampleError(DomainError):
    """An OHLC sample with R = 0 (no angular information)."""


class ConvergenceError(BridgeVolError, ArithmeticError):
    """A series or quadrature failed to reach its tolerance.

    ``partial`` holds the best value reached and ``terms`` the number of
    terms (or evaluations) spent.
    """

    def __init__(self, message, partial=None, terms=None):
        super().__init__(message)
        self.partial = partial
        self.terms = terms


class ConfigError(BridgeVolError):
    """A configuration file or option is invalid."""


class InputError(BridgeVolError):
    """User-supplied data cannot be used."""
