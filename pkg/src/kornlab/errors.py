"""Exception hierarchy.

Validation problems (bad input, broken mesh invariants) derive from
``ValidationError``; numerical failures (singular pencils, missed residual
contracts) derive from ``NumericalError``. The CLI maps them to exit codes
1 and 2.
"""


class KornLabError(Exception):
    """Base class for all package errors."""


class ValidationError(KornLabError, ValueError):
    """Input violates a documented precondition."""


class MeshError(ValidationError):
    """Mesh violates a structural invariant (orientation, indices, topology)."""


class LabelError(MeshError):
    """Boundary labels do not partition the boundary."""


class SchemaError(ValidationError):
    """Serialized text does not conform to its schema."""


class NoAxisError(ValidationError):
    """Rigid motion has no rotation axis (pure translation)."""


class NumericalError(KornLabError, ArithmeticError):
    """A numerical contract could not be met."""


class EmptyConstrainedSpaceError(NumericalError):
    """Constraints leave no degrees of freedom."""


class DenominatorSingularError(NumericalError):
    """Reduced denominator of a Rayleigh quotient is not positive definite."""


class ConvergenceError(NumericalError):
    """Iterative solver missed its residual contract."""
