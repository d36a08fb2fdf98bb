"""Exception types shared across the package."""


class StrainsimError(Exception):
    """Base class for all package errors."""


class ConfigError(StrainsimError):
    """Invalid or inconsistent configuration input."""


class DomainError(StrainsimError):
    """Argument outside its physical domain (e.g. abscissa off the rod)."""


class NumericalError(StrainsimError):
    """Numerical degeneracy: singular matrix, zero-length tangent, ..."""


class SingularityError(NumericalError):
    """Coordinate-transform Jacobian too ill-conditioned to invert."""


class DivergenceError(StrainsimError):
    """Time integration produced non-finite state."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class ConvergenceError(StrainsimError):
    """Iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UnreachableTargetError(ConvergenceError):
    """Inverse-kinematics target not attainable on the equilibrium set."""
