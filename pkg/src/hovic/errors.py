"""Exception types shared across the package."""


class HovicError(Exception):
    """Base class for all package errors."""


class UnsupportedStageCount(HovicError):
    """Stage count below the quadrature family's minimum."""


class ZeroWeight(HovicError):
    """A quadrature weight is zero where a division by it is required."""


class DegenerateNodes(HovicError):
    """First and last collocation nodes coincide (c_1 == c_s)."""


class SingularMass(HovicError):
    """Velocity Hessian of the Lagrangian is singular at an evaluation point."""


class NoConvergence(HovicError):
    """Newton iteration hit the iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class SingularJacobian(HovicError):
    """Newton linear system is singular."""


class SingularKkt(HovicError):
    """KKT matrix is rank deficient (non-coercive cost discretization)."""


class DegenerateFit(HovicError):
    """Order-study errors hit the floating point floor; slope is meaningless."""


class DimensionMismatch(HovicError):
    """Inconsistent array dimensions between trajectory, multipliers or model."""


class UnknownVariant(HovicError):
    """Unknown cost-discretization variant id."""


class SchemeMismatch(HovicError):
    """Operation requires the symplectic Galerkin scheme."""


class NonCoerciveVariant(HovicError):
    """Commutation check refused for a non-coercive cost discretization."""


class UsageError(HovicError):
    """Invalid CLI usage."""
