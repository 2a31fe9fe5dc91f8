"""Shared exception types."""


class ObextError(Exception):
    """Base class for package errors."""


class UsageError(ObextError):
    """Bad configuration, arguments, or preconditions supplied by the caller."""


class InvariantViolation(ObextError):
    """A constructed object failed one of its hard invariants."""


class QuadratureError(ObextError):
    """Adaptive quadrature failed to converge within its refinement budget."""
