"""Exception and warning types.

Errors split into two families that the CLI maps to exit codes:
configuration/contract misuse (exit 2) and numerical or degeneracy
failures (exit 3).
"""


class WbicError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(WbicError, ValueError):
    """Invalid configuration or dimensions."""


class ContractError(WbicError, ValueError):
    """An operation was called outside its documented preconditions."""


class UnsupportedError(WbicError):
    """Requested feature is outside what the implementation supports."""


class UnavailableError(WbicError):
    """A quantity cannot be computed from the information at hand."""


class NumericalFailure(WbicError):
    """Base for numerical and degeneracy failures."""


class NumericalError(NumericalFailure):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InitError(NumericalFailure):
    pass


class AdaptationError(NumericalFailure):
    pass


class OptimizationError(NumericalFailure):
    pass


class DegenerateRungError(NumericalFailure):
    def __init__(self, message, rung=None):
        super().__init__(message)
        self.rung = rung


class DegenerateWeightsError(NumericalFailure):
    pass


class BracketError(NumericalFailure):
    pass


class DegenerateModelError(NumericalFailure):
    pass


class BoundaryWarning(UserWarning):
    """More than 1% of a grid integrand's mass sits in boundary cells."""


class LowEssWarning(UserWarning):
    """Importance weights are usable but poorly spread."""
