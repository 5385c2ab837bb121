"""Exception hierarchy shared by all modules."""


class MixedPLapError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(MixedPLapError, ValueError):
    """Malformed shape description or DSL string."""


class InvalidSpacing(MixedPLapError, ValueError):
    pass


class NoActiveCells(MixedPLapError, ValueError):
    pass


class NonpositiveVolume(MixedPLapError, ValueError):
    pass


class InvalidParams(MixedPLapError, ValueError):
    pass


class GridMismatch(MixedPLapError, ValueError):
    pass


class ZeroField(MixedPLapError, ValueError):
    pass


class PreconditionViolated(MixedPLapError, ValueError):
    pass


class DimensionTooSmall(MixedPLapError, ValueError):
    pass


class NoSignChange(MixedPLapError, ValueError):
    pass


class DegenerateLoop(MixedPLapError, ValueError):
    pass


class NegativeValues(MixedPLapError, ValueError):
    pass


class OverlappingBalls(MixedPLapError, ValueError):
    pass


class NotConverged(MixedPLapError, RuntimeError):
    """Iteration cap reached; ``result`` holds the best iterate found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
