"""Exception and warning types shared across the package."""

from __future__ import annotations


class MagDbarError(Exception):
    """Base class for all package errors."""


class OutOfDomainError(MagDbarError, ValueError):
    """A weight was queried outside the region where it is defined."""


class GridError(MagDbarError, ValueError):
    """Invalid lattice parameters (non-integral R/h, bad dimension)."""


class NodeBudgetError(GridError):
    """The requested lattice exceeds the configured node budget."""


class GridMismatchError(GridError):
    """Two fields or operators live on different lattices."""


class ContractViolationError(MagDbarError):
    """A precondition of an operation was violated by its input."""


class ConvergenceError(MagDbarError):
    """An iterative method stopped before reaching its tolerance.

    ``partial`` carries whatever was computed before giving up.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DefinitenessError(MagDbarError):
    """An operator expected to be positive definite is not."""


class RankDeficiencyError(MagDbarError):
    """Requested basis size exceeds what the grid can resolve; reduce K."""


class NotSubharmonicError(MagDbarError, ValueError):
    """The weight has a negative Laplacian at a sampled point."""


class UndefinedPotentialError(MagDbarError, ValueError):
    """Effective potentials need n >= 2 complex variables."""


class ConfigError(MagDbarError, ValueError):
    """Run configuration failed validation."""


class MagneticResolutionWarning(UserWarning):
    """max(|A|) * h exceeds 1: the phase per lattice cell is too large."""
