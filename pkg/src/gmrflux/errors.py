"""Exception hierarchy.

Errors split into two families so the command line front-end can map them
onto exit codes: :class:`InputError` (bad or inconsistent inputs, exit 2) and
:class:`NumericalError` (factorization or solver breakdown, exit 1).
"""


class GmrfluxError(Exception):
    """Base class for all package errors."""


class InputError(GmrfluxError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalError(GmrfluxError, ArithmeticError):
    """A numerical step broke down."""


# sphere mesh
class TooFewNodes(InputError):
    pass


class DegenerateNodes(InputError):
    pass


class DegenerateTriangle(InputError):
    pass


class PointNotLocated(NumericalError):
    pass


# precision matrices
class NotPositiveDefinite(NumericalError):
    pass


class NonStationary(InputError):
    pass


class SingularYuleWalker(NumericalError):
    pass


# integration / observation
class GridMismatch(InputError):
    pass


class QuadratureTooCoarse(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class UnknownClass(InputError):
    pass


class NoFirstYearData(InputError):
    pass


class CholeskyFailure(NumericalError):
    pass


# harness
class EmptyInput(InputError):
    pass


class MaskNotPartition(InputError):
    pass


class MaxIterationsExceeded(RuntimeWarning):
    """Optimizer stopped on its iteration budget; the best point is returned."""
