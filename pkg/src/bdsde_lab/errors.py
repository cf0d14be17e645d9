"""Exception hierarchy shared by every module."""


class BDSDEError(Exception):
    """Base class for all package errors."""


class ValidationError(BDSDEError, ValueError):
    """An argument or configuration value violates a precondition."""


class ConfigurationError(BDSDEError):
    """A required ingredient (partials, partition, ...) is missing."""


class SimulationError(BDSDEError):
    """Forward simulation hit a degenerate state."""


class SolverError(BDSDEError):
    """Backward induction hit an ill-conditioned regression."""


class UnsupportedError(BDSDEError):
    """The requested configuration is outside what a solver handles."""
