"""Exception hierarchy shared across the package.

Everything derives from UniPCError so callers can catch library failures
with one clause.  DomainError and ValidationError also derive from
ValueError, matching how bad arguments are usually handled in Python.
"""


class UniPCError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(UniPCError, ValueError):
    """An argument is outside the mathematically usable range."""


class ValidationError(UniPCError, ValueError):
    """A config, grid, or schedule failed structural validation."""


class SingularSystemError(UniPCError):
    """A coefficient system could not be solved (duplicate or zero nodes)."""


class InsufficientHistoryError(UniPCError):
    """The solver buffer does not hold enough past model outputs."""


class NumericError(UniPCError):
    """A non-finite value appeared during sampling.

    Carries the 1-based step index where the run aborted.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ReferenceAccuracyError(UniPCError):
    """The fine reference integrator failed its self-consistency check."""


class FitError(UniPCError):
    """Too few usable points remained for an order fit."""
