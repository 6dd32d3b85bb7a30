"""Exception hierarchy shared across the package.

The CLI maps each family onto a process exit code, so new exceptions should
subclass one of the family bases below rather than :class:`SlamError` directly.
"""


class SlamError(Exception):
    """Base class for all package errors."""


class InputError(SlamError, ValueError):
    """Malformed files, configs or arguments (CLI exit code 2)."""


class DegenerateGeometry(SlamError):
    """Geometry that leaves the estimate under-constrained (CLI exit code 4)."""


# geometry
class NonPositiveDepth(SlamError):
    """Point lies on or behind the camera plane."""


# saliency
class OutOfBounds(SlamError, IndexError):
    pass


class DimensionMismatch(SlamError, ValueError):
    pass


class MalformedHeader(InputError):
    pass


class UnsupportedMaxval(InputError):
    pass


class TruncatedData(InputError):
    pass


# optimizer
class SingularReducedSystem(DegenerateGeometry):
    pass


class SingularHessian(DegenerateGeometry):
    pass


class TooFewObservations(DegenerateGeometry):
    pass


# entropy
class NonPositiveDeterminant(SlamError, ValueError):
    pass


class ZeroDenominator(SlamError, ZeroDivisionError):
    pass


class TooFewKeyframes(SlamError, ValueError):
    pass


class NonPositiveBeta(SlamError, ValueError):
    pass


# pipeline
class TrackingLost(SlamError):
    """Raised when a frame has too few usable observations.

    ``partial`` carries the run result accumulated up to the failing frame.
    """

    def __init__(self, message, frame_id=None, partial=None):
        super().__init__(message)
        self.frame_id = frame_id
        self.partial = partial


# evaluation
class NoMatches(SlamError, ValueError):
    pass


class DegenerateConfiguration(DegenerateGeometry):
    pass


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(where + message)
        self.path = path
        self.line = line


class NonMonotonicTimestamps(InputError):
    pass
