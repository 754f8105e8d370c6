"""Exception types shared across the package."""


class SbmlabError(Exception):
    """Base class for all package errors."""


class DomainError(SbmlabError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DimensionMismatchError(SbmlabError, ValueError):
    """Particle cloud and test function disagree on the spatial dimension."""


class DivergenceError(SbmlabError, ValueError):
    """A requested integral diverges (e.g. Green pairing in d <= 2)."""


class UnsupportedDimensionError(SbmlabError, ValueError):
    """The operation is not defined for this spatial dimension."""


class SolverError(SbmlabError, RuntimeError):
    """Mild solver failed to converge; carries the offending residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class BlowupError(SolverError):
    """Sup-norm doubled within one step: the source strength is outside the
    validity region of the occupation Laplace transform."""


class EnvironmentGapError(SbmlabError, ValueError):
    """Environment snapshots are too sparse for the requested quadrature."""


class ParticleBudgetError(SbmlabError, RuntimeError):
    """Particle count exceeded 4x the configured budget; supercritical drift
    indicates a bug in the branching dynamics."""
