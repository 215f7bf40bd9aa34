"""Exception hierarchy shared by all solver modules."""


class HdrmError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(HdrmError, ValueError):
    """Degenerate geometry, or a point outside the mesh hull."""


class ElementNotFoundError(HdrmError, KeyError):
    """An element id that does not exist in the mesh."""


class DimensionError(HdrmError, ValueError):
    """Array sizes do not match the mesh or the operator."""


class NumericError(HdrmError, ArithmeticError):
    """A field evaluated to a non-finite value.

    The offending coordinates are kept on ``point`` for diagnostics.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SingularMatrixError(HdrmError, ArithmeticError):
    """Direct elimination hit a (numerically) zero pivot or diagonal."""


class BreakdownError(HdrmError, ArithmeticError):
    """A Krylov iteration broke down before reaching the tolerance."""


class CoefficientError(HdrmError, ValueError):
    """Diffusion tensor is not symmetric positive definite."""


class ConstraintConflictError(HdrmError, ValueError):
    """Two Dirichlet constraints disagree on the same node."""


class ConfigError(HdrmError, ValueError):
    """Invalid solver or refinement configuration."""


class NonUniqueError(HdrmError, ValueError):
    """Boundary data does not determine a unique solution."""


class UnsupportedError(HdrmError, ValueError):
    """The requested method cannot handle this problem."""


class ValidationError(HdrmError, ValueError):
    """Problem-file validation failure, carrying every message found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class DegenerateCentersError(SingularMatrixError):
    """RBF centres coincide or the interpolation matrix is singular."""
