"""Exception types shared across the package."""


class TreewalkError(Exception):
    """Base class for all package errors."""


class NoSolution(TreewalkError):
    """The criticality constraints admit no solution in the search box.

    Carries the best residuals seen so that callers can report how far
    the search ended from a root.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class BudgetExceeded(TreewalkError):
    """A growth or solve loop hit its configured cap.

    ``partial`` holds whatever was built before the cap, so callers can
    inspect diagnostics instead of silently truncating.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ExcursionBudgetExceeded(BudgetExceeded):
    """A single excursion ran past its step cap (recorded as censored)."""


class StepCapExceeded(BudgetExceeded):
    """A stopped random-walk simulation ran past its step cap."""


class EnumerationBudgetExceeded(BudgetExceeded):
    """Exhaustive enumeration would visit too many configurations."""


class SolveFailed(TreewalkError):
    """A linear solve or iteration did not reach its residual target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ParityMassZero(TreewalkError):
    """The selected parity class carries no mass."""


class DomainError(TreewalkError):
    """Argument outside the mathematical domain of the function."""


class DegeneratePath(TreewalkError):
    """Sampled path unusable (last zero too close to the endpoint)."""


class UnsupportedLaw(TreewalkError):
    """Operation requires a finite-support mark law."""


class InvalidPair(TreewalkError):
    """The pair of vertices violates a precondition (e.g. x == y)."""


class ConfigError(TreewalkError):
    """Malformed configuration file; message carries line/key context."""
