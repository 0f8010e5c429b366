"""Exception types raised across the package.

Every error derives from :class:`OPressError` so callers (the CLI in
particular) can catch one base class. Errors that describe a bad argument
also derive from :class:`ValueError`.
"""


class OPressError(Exception):
    """Base class for all package errors."""


class InvariantViolation(OPressError, ValueError):
    pass


class DimMismatch(OPressError, ValueError):
    pass


class DimNotDivisible(OPressError, ValueError):
    pass


class FrameTooSmall(OPressError, ValueError):
    pass


# imagecore
class OctbFormatError(OPressError):
    pass


class BadMagic(OctbFormatError):
    pass


class TruncatedFile(OctbFormatError):
    pass


class NonFiniteData(OctbFormatError):
    pass


class IoFailure(OPressError, OSError):
    pass


class AllZeroFrame(OPressError, ValueError):
    pass


# simulate
class SupportTooSmall(OPressError, ValueError):
    pass


class KernelTooLarge(OPressError, ValueError):
    pass


class EmptyReflectivity(OPressError, ValueError):
    pass


class SpecInvalid(OPressError, ValueError):
    pass


# maskgen
class NoSurfaceFound(OPressError):
    def __init__(self, message, missing_columns=()):
        super().__init__(message)
        self.missing_columns = list(missing_columns)


# diffnet / pipeline
class NonFiniteGradient(OPressError, FloatingPointError):
    pass


class NonFiniteLoss(OPressError, FloatingPointError):
    pass


class TooFewFrames(OPressError, ValueError):
    pass


class CheckpointError(OPressError):
    pass


# quality
class ZeroDenominator(OPressError, ZeroDivisionError):
    pass


class ZeroVariance(OPressError, ZeroDivisionError):
    pass


class ZeroBackgroundVariance(OPressError, ZeroDivisionError):
    pass


class NonPositiveContrast(OPressError, ValueError):
    pass


class NoHalfCrossing(OPressError, ValueError):
    pass


class ColOutOfRange(OPressError, IndexError):
    pass
