"""Exception types shared across the simulator."""


class ItercdmaError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(ItercdmaError):
    """Inconsistent scenario setup (dimension mismatch, bad framing, ...)."""


class ParameterError(ItercdmaError):
    """A single argument is outside its admissible range."""


class RankError(ItercdmaError):
    """Normal-equations matrix is singular or too ill-conditioned to trust."""


class SolverError(ItercdmaError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DataQualityWarning(UserWarning):
    """Raised-as-warning marker for suspicious Monte Carlo data."""
