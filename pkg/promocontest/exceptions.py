"""Custom exceptions used by the promocontest package."""

from __future__ import annotations


class PromoContestError(RuntimeError):
    """Base class for every error raised by promocontest."""

    def __init__(self, message: str, *, original: Exception | None = None) -> None:
        super().__init__(message)
        self.original = original


class ParameterDomainError(PromoContestError, ValueError):
    """Raised when a model parameter lies outside its admissible domain."""


class DiscretizationError(PromoContestError):
    """Raised when a grid is too coarse to produce a proper transition kernel."""

    def __init__(self, message: str, *, state: int | None = None, original: Exception | None = None) -> None:
        super().__init__(message, original=original)
        self.state = state


class StepSizeError(PromoContestError):
    """Raised when the uniformization step Δ is too large for the requested rates."""


class NumericalError(PromoContestError):
    """Raised when an iterative computation fails to converge or loses monotonicity."""

    def __init__(self, message: str, *, residual: float | None = None, original: Exception | None = None) -> None:
        super().__init__(message, original=original)
        self.residual = residual


class SolverError(PromoContestError):
    """Raised when a linear system cannot be solved."""


class InstanceTooLargeError(PromoContestError):
    """Raised when an exact or brute-force computation would exceed its size limit."""

    def __init__(self, message: str, *, size: int | None = None, limit: int | None = None) -> None:
        super().__init__(message)
        self.size = size
        self.limit = limit


class PolicyError(PromoContestError):
    """Raised when a delegation policy returns an action the contest cannot execute."""


class ConfigError(PromoContestError):
    """Raised when a configuration or instance document cannot be parsed."""


class StaleCacheError(PromoContestError):
    """Raised when a cached index table does not belong to the requested worker spec."""


__all__ = [
    "PromoContestError",
    "ParameterDomainError",
    "DiscretizationError",
    "StepSizeError",
    "NumericalError",
    "SolverError",
    "InstanceTooLargeError",
    "PolicyError",
    "ConfigError",
    "StaleCacheError",
]
