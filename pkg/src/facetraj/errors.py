"""Exception hierarchy.

``InputError`` subclasses map to CLI exit code 2, ``NumericError``
subclasses to exit code 3.
"""


class FacetrajError(Exception):
    exit_code = 2


class InputError(FacetrajError, ValueError):
    exit_code = 2


class NumericError(FacetrajError, ArithmeticError):
    exit_code = 3


class DegenerateLandmarks(InputError):
    pass


class EmptyGrid(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class ShapeError(DimensionMismatch):
    pass


class EmptyRegion(InputError):
    pass


class TooShort(InputError):
    pass


class NyquistViolation(InputError):
    pass


class EmptyVideo(InputError):
    pass


class MissingFrame(InputError):
    pass


class MisalignedLandmarks(InputError):
    pass


class NonFiniteLoss(NumericError):
    pass
