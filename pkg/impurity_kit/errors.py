from __future__ import annotations


class ImpurityKitError(Exception):
    """Base class for every domain error raised by impurity_kit."""


class NotAntisymmetric(ImpurityKitError):
    pass


class NotOrthogonal(ImpurityKitError):
    pass


class OddWeightMask(ImpurityKitError):
    pass


class SingularTriple(ImpurityKitError):
    """The triple product with the reference state vanished.

    The caller has to re-anchor the states against another reference.
    """


class OrthogonalToReference(SingularTriple):
    """A phase was requested for a state orthogonal to its reference."""


class ZeroNorm(ImpurityKitError):
    pass


class ModulusOutOfRange(ImpurityKitError):
    pass


class GapOutOfRange(ImpurityKitError):
    pass


class InvalidModel(ImpurityKitError):
    """Model validation failure pointing at the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class DimensionTooLarge(ImpurityKitError):
    pass


class BudgetExceeded(ImpurityKitError):
    pass


class RepresentationFailure(ImpurityKitError):
    pass


class DimensionMismatch(ImpurityKitError):
    pass


class DegenerateGram(ImpurityKitError):
    pass
