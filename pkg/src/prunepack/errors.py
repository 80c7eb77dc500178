"""Exception hierarchy shared across the package."""


class PrunepackError(Exception):
    """Base class for all errors raised by this package."""


class GraphFormatError(PrunepackError, ValueError):
    """A document does not conform to one of the on-disk formats."""


class ValidationError(PrunepackError, ValueError):
    """A value violates a structural invariant (graph, sample, plan, ...)."""


class InfeasibleBudgetError(PrunepackError, ValueError):
    """The requested budget cannot be met even by the minimal plan."""


class KnapsackMemoryError(PrunepackError, RuntimeError):
    """The exact solver's backtracking table would exceed the memory cap."""
