"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses (2 = data/domain, 3 = numerical).
"""


class OUChangeError(Exception):
    exit_code = 2


class DomainError(OUChangeError, ValueError):
    """Input outside the domain of an operation."""

    exit_code = 2


class NumericalError(OUChangeError, ArithmeticError):
    exit_code = 3


class DimensionMismatch(DomainError):
    pass


class NonpositiveAlpha(DomainError):
    pass


class SigmaNonpositive(DomainError):
    pass


class InvalidStep(DomainError):
    pass


class SegmentError(DomainError):
    """Segment off the observation grid, empty, or not adjacent."""


class WindowInvalid(DomainError):
    pass


class GridTooCoarse(DomainError):
    pass


class HorizonTooShort(DomainError):
    pass


class DependentBasis(NumericalError):
    pass


class SingularStats(NumericalError):
    pass
